//! Multilayer-perceptron binary classifier over a flat parameter vector.
//!
//! Parameters are laid out layer by layer; each layer stores its weight
//! matrix row-major (`out x in`) followed by its bias vector. Hidden layers
//! use ReLU, the single output unit uses a sigmoid.
//!
//! The training objective is mean binary cross-entropy plus an optional
//! `weight_decay * ½‖w‖²` penalty, whose gradient `weight_decay * w` is added
//! inside the SGD step.

use crate::data::Dataset;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("layer dims {0:?} invalid: need at least [input, 1] with positive widths and output width 1")]
    Architecture(Vec<usize>),
    #[error("expected {expected} weights for the architecture, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("feature width {found} does not match model input width {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyData,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("threshold {0} not in (0, 1)")]
    Threshold(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    weights: Vec<f64>,
    /// Round index of the global model this vector belongs to.
    pub version: u64,
}

fn check_dims(dims: &[usize]) -> Result<(), ModelError> {
    if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(ModelError::Architecture(dims.to_vec()));
    }
    Ok(())
}

/// Number of parameters implied by `dims`.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelParams {
    pub fn new(layer_dims: Vec<usize>, weights: Vec<f64>, version: u64) -> Result<Self, ModelError> {
        check_dims(&layer_dims)?;
        let expected = param_count(&layer_dims);
        if weights.len() != expected {
            return Err(ModelError::WeightCount {
                expected,
                found: weights.len(),
            });
        }
        Ok(ModelParams {
            layer_dims,
            weights,
            version,
        })
    }

    pub fn zeros(layer_dims: Vec<usize>) -> Result<Self, ModelError> {
        let n = {
            check_dims(&layer_dims)?;
            param_count(&layer_dims)
        };
        ModelParams::new(layer_dims, vec![0.0; n], 0)
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init_uniform(layer_dims: Vec<usize>, seed: u64) -> Result<Self, ModelError> {
        let mut p = ModelParams::zeros(layer_dims)?;
        let mut rng = seed::rng(seed);
        let mut offset = 0;
        for w in p.layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.weights[offset..offset + fan_in * fan_out] {
                *v = rng.gen_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_width(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layer_dims == other.layer_dims
    }

    /// Uniform average of `models`, all of which must share one architecture.
    /// Returns `None` for an empty slice or mismatched shapes.
    pub fn average<'a>(models: impl IntoIterator<Item = &'a ModelParams>) -> Option<ModelParams> {
        let mut iter = models.into_iter();
        let first = iter.next()?;
        let mut sum = first.weights.clone();
        let mut count = 1usize;
        for m in iter {
            if !m.same_shape(first) {
                return None;
            }
            for (s, w) in sum.iter_mut().zip(&m.weights) {
                *s += w;
            }
            count += 1;
        }
        let inv = count as f64;
        sum.iter_mut().for_each(|s| *s /= inv);
        Some(ModelParams {
            layer_dims: first.layer_dims.clone(),
            weights: sum,
            version: first.version,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 32,
            weight_decay: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ModelError::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
    pub f1: f64,
    pub precision: f64,
}

/// Scratch buffers for one forward/backward pass.
struct Pass {
    /// Post-activation outputs of every layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
}

impl Pass {
    fn new(dims: &[usize]) -> Self {
        Pass {
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass; returns the output logit and leaves activations in `pass`.
fn forward(params: &ModelParams, x: &[f64], pass: &mut Pass) -> f64 {
    let dims = &params.layer_dims;
    let layers = dims.len() - 1;
    pass.acts[0].copy_from_slice(x);
    let mut offset = 0;
    for l in 0..layers {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let w = &params.weights[offset..offset + n_in * n_out];
        let b = &params.weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
        let (prev, next) = pass.acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut next[0];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            out[o] = if l + 1 == layers { z } else { z.max(0.0) };
        }
        offset += n_in * n_out + n_out;
    }
    pass.acts[layers][0]
}

/// Accumulates `scale * d(logit)/d(w)` into `grad`, using the activations
/// left in `pass` by [`forward`].
fn backward(params: &ModelParams, pass: &Pass, scale: f64, grad: &mut [f64]) {
    let dims = &params.layer_dims;
    let layers = dims.len() - 1;
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offsets.push(off);
        off += dims[l] * dims[l + 1] + dims[l + 1];
    }
    // delta = dLoss/dz for the current layer's pre-activations.
    let mut delta = vec![scale];
    for l in (0..layers).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let base = offsets[l];
        let input = &pass.acts[l];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
            grad[base + n_in * n_out + o] += d;
        }
        if l > 0 {
            let w = &params.weights[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            // ReLU derivative: active where the stored activation is positive.
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn check_width(params: &ModelParams, width: usize) -> Result<(), ModelError> {
    if params.input_width() != width {
        return Err(ModelError::Dimension {
            expected: params.input_width(),
            found: width,
        });
    }
    Ok(())
}

fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Probability of the positive (fraud) class.
pub fn predict(params: &ModelParams, features: &[f64]) -> Result<f64, ModelError> {
    check_width(params, features.len())?;
    let mut pass = Pass::new(&params.layer_dims);
    Ok(sigmoid(forward(params, features, &mut pass)))
}

/// Mean binary cross-entropy over `data`, without any penalty.
pub fn loss(params: &ModelParams, data: &Dataset) -> Result<f64, ModelError> {
    penalized_loss(params, data, 0.0)
}

/// Mean binary cross-entropy plus `weight_decay * ½‖w‖²`.
pub fn penalized_loss(params: &ModelParams, data: &Dataset, weight_decay: f64) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    check_width(params, data.width())?;
    let mut pass = Pass::new(&params.layer_dims);
    let total: f64 = data
        .iter()
        .map(|ex| bce(sigmoid(forward(params, &ex.features, &mut pass)), ex.label))
        .sum();
    Ok(total / data.len() as f64 + l2_penalty(params, weight_decay))
}

fn l2_penalty(params: &ModelParams, weight_decay: f64) -> f64 {
    if weight_decay == 0.0 {
        0.0
    } else {
        0.5 * weight_decay * params.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Gradient of [`penalized_loss`] over `batch`.
pub fn gradient(params: &ModelParams, batch: &Dataset, weight_decay: f64) -> Result<Vec<f64>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyData);
    }
    check_width(params, batch.width())?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut pass = Pass::new(&params.layer_dims);
    batch_gradient(params, batch, &idx, weight_decay, &mut pass, &mut grad);
    Ok(grad)
}

fn batch_gradient(
    params: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    weight_decay: f64,
    pass: &mut Pass,
    grad: &mut [f64],
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv = 1.0 / idx.len() as f64;
    for &i in idx {
        let ex = &data.examples()[i];
        let p = sigmoid(forward(params, &ex.features, pass));
        let dz = (p - f64::from(ex.label)) * inv;
        backward(params, pass, dz, grad);
    }
    if weight_decay != 0.0 {
        for (g, w) in grad.iter_mut().zip(&params.weights) {
            *g += weight_decay * w;
        }
    }
}

/// Mini-batch SGD: `epochs * ceil(|data| / batch_size)` steps of
/// `w <- w - lr * grad`, reshuffling the example order each epoch with a
/// generator seeded from `cfg.seed`.
pub fn local_train(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    check_width(params, data.width())?;
    let mut out = params.clone();
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; out.len()];
    let mut pass = Pass::new(&out.layer_dims);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            batch_gradient(&out, data, batch, cfg.weight_decay, &mut pass, &mut grad);
            for (w, g) in out.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
    }
    Ok(out)
}

/// Thresholded classification metrics with fraud (label 1) as the positive
/// class. Precision and F1 are 0 when undefined.
pub fn evaluate(params: &ModelParams, data: &Dataset, threshold: f64) -> Result<Metrics, ModelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ModelError::Threshold(threshold));
    }
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    check_width(params, data.width())?;
    let mut pass = Pass::new(&params.layer_dims);
    let mut probs = Vec::with_capacity(data.len());
    for ex in data {
        probs.push(sigmoid(forward(params, &ex.features, &mut pass)));
    }
    let labels: Vec<u8> = data.iter().map(|e| e.label).collect();
    let mut m = metrics_from_predictions(
        &probs
            .iter()
            .map(|&p| u8::from(p >= threshold))
            .collect::<Vec<_>>(),
        &labels,
    );
    m.loss = probs.iter().zip(&labels).map(|(&p, &y)| bce(p, y)).sum::<f64>() / data.len() as f64;
    Ok(m)
}

/// Accuracy, precision and F1 from hard predictions. `loss` is left at 0.
pub fn metrics_from_predictions(predicted: &[u8], labels: &[u8]) -> Metrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = (tp + fp + fn_ + tn).max(1) as f64;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        accuracy: (tp + tn) as f64 / n,
        loss: 0.0,
        f1,
        precision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic(w: &[f64], b: f64) -> ModelParams {
        let mut v = w.to_vec();
        v.push(b);
        ModelParams::new(vec![w.len(), 1], v, 0).unwrap()
    }

    fn data(rows: &[(&[f64], u8)]) -> Dataset {
        Dataset::from_rows(
            rows.iter().map(|r| r.0.to_vec()).collect(),
            rows.iter().map(|r| r.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn param_layout_counts() {
        assert_eq!(param_count(&[30, 16, 1]), 30 * 16 + 16 + 16 + 1);
        assert!(ModelParams::zeros(vec![3, 2]).is_err());
        assert!(ModelParams::zeros(vec![3]).is_err());
        assert!(ModelParams::new(vec![2, 1], vec![0.0; 2], 0).is_err());
    }

    #[test]
    fn zero_weights_predict_half() {
        let p = ModelParams::zeros(vec![4, 3, 1]).unwrap();
        assert_eq!(predict(&p, &[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn saturated_logit() {
        let p = logistic(&[10.0, 10.0], 0.0);
        assert!(predict(&p, &[1.0, 1.0]).unwrap() > 0.99);
    }

    #[test]
    fn cancelling_weights() {
        let p = logistic(&[1.0, -1.0, 0.0], 0.0);
        assert_eq!(predict(&p, &[1.0, 1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let p = logistic(&[1.0, -1.0, 0.0], 0.0);
        assert!(matches!(
            predict(&p, &[1.0]),
            Err(ModelError::Dimension {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn zero_weight_loss_is_ln2() {
        let p = ModelParams::zeros(vec![2, 1]).unwrap();
        let d = data(&[(&[1.0, 2.0], 1), (&[0.0, -1.0], 0), (&[3.0, 3.0], 0)]);
        assert!((loss(&p, &d).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn separated_loss_is_tiny() {
        let p = logistic(&[50.0], 0.0);
        let d = data(&[(&[1.0], 1), (&[-1.0], 0)]);
        assert!(loss(&p, &d).unwrap() < 1e-3);
    }

    #[test]
    fn hand_computed_bce() {
        // w = (0.5, -1), b = 0.25; logits 0.75, -1.25, 1.75, -0.25.
        let p = logistic(&[0.5, -1.0], 0.25);
        let d = data(&[
            (&[1.0, 0.0], 1),
            (&[1.0, 2.0], 0),
            (&[3.0, 0.0], 0),
            (&[0.0, 0.5], 1),
        ]);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expected =
            (-(s(0.75)).ln() - (1.0 - s(-1.25)).ln() - (1.0 - s(1.75)).ln() - (s(-0.25)).ln()) / 4.0;
        assert!((loss(&p, &d).unwrap() - expected).abs() < 1e-14);
        let penal = penalized_loss(&p, &d, 0.1).unwrap();
        assert!((penal - expected - 0.05 * (0.25 + 1.0 + 0.0625)).abs() < 1e-14);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let p = ModelParams::zeros(vec![2, 1]).unwrap();
        let e = Dataset::empty(2);
        assert_eq!(loss(&p, &e), Err(ModelError::EmptyData));
        assert_eq!(gradient(&p, &e, 0.0), Err(ModelError::EmptyData));
        assert_eq!(evaluate(&p, &e, 0.5), Err(ModelError::EmptyData));
    }

    #[test]
    fn zero_weight_single_example_gradient() {
        let p = ModelParams::zeros(vec![3, 1]).unwrap();
        let x = [0.3, -2.0, 5.0];
        let d = data(&[(&x, 1)]);
        let g = gradient(&p, &d, 0.001).unwrap();
        for j in 0..3 {
            assert!((g[j] + 0.5 * x[j]).abs() < 1e-15);
        }
        assert!((g[3] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = ModelParams::init_uniform(vec![2, 3, 1], 5).unwrap();
        let d = data(&[(&[1.0, 2.0], 1), (&[-1.0, 0.5], 0)]);
        let dd = d.concat(&d).unwrap();
        let a = gradient(&p, &d, 0.01).unwrap();
        let b = gradient(&p, &dd, 0.01).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn one_full_batch_step_identity() {
        let p = ModelParams::init_uniform(vec![2, 4, 1], 1).unwrap();
        let d = data(&[(&[1.0, 2.0], 1), (&[-1.0, 0.5], 0), (&[0.2, 0.1], 0)]);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 3,
            weight_decay: 0.001,
            seed: 3,
        };
        let trained = local_train(&p, &d, &cfg).unwrap();
        let g = gradient(&p, &d, cfg.weight_decay).unwrap();
        for ((t, w), gv) in trained.weights().iter().zip(p.weights()).zip(&g) {
            assert_eq!(*t, w - 0.1 * gv);
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let p = ModelParams::zeros(vec![1, 1]).unwrap();
        let d = data(&[(&[1.0], 1)]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(local_train(&p, &d, &cfg), Err(ModelError::Config(_))));
    }

    #[test]
    fn confusion_matrix_example() {
        let m = metrics_from_predictions(&[1, 1, 0], &[1, 0, 0]);
        assert_eq!(m.precision, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_all_negative() {
        let m = metrics_from_predictions(&[0, 0, 0], &[0, 0, 0]);
        assert_eq!((m.precision, m.f1, m.accuracy), (0.0, 0.0, 1.0));
    }

    #[test]
    fn evaluate_thresholds_probabilities() {
        let p = logistic(&[1.0], 0.0);
        let d = data(&[(&[2.0], 1), (&[1.0], 0), (&[-3.0], 0)]);
        let m = evaluate(&p, &d, 0.5).unwrap();
        assert_eq!(m.precision, 0.5);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.loss > 0.0);
        assert!(evaluate(&p, &d, 1.0).is_err());
    }
}
