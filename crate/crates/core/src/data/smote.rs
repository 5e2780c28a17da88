//! Synthetic minority oversampling.

use super::{imbalance_stats, knn_among, DataError, Dataset, Example, MINORITY};
use crate::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteConfig {
    /// Number of minority neighbours to interpolate toward.
    pub k: usize,
    /// Desired minority/majority ratio after synthesis.
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

/// Where one synthetic example came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synthesis {
    /// Index (in the input dataset) of the minority example interpolated from.
    pub parent: usize,
    /// Index of the chosen neighbour.
    pub neighbor: usize,
    /// Interpolation coefficient in [0, 1].
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SmoteOutput {
    /// Input examples unchanged, followed by the synthetic ones.
    pub dataset: Dataset,
    /// One entry per appended synthetic example, in order.
    pub provenance: Vec<Synthesis>,
}

/// Appends synthetic minority examples `x + (x_nn - x) * r` until
/// minority/majority reaches `cfg.target_ratio`. Parents are visited
/// round-robin in dataset order; the neighbour is drawn uniformly from the
/// parent's `k` nearest minority neighbours and `r` uniformly from [0, 1).
pub fn smote(data: &Dataset, cfg: &SmoteConfig) -> Result<Dataset, DataError> {
    smote_with_provenance(data, cfg).map(|o| o.dataset)
}

pub fn smote_with_provenance(data: &Dataset, cfg: &SmoteConfig) -> Result<SmoteOutput, DataError> {
    smote_sampled(data, cfg, |rng| rng.gen::<f64>())
}

pub(crate) fn smote_sampled(
    data: &Dataset,
    cfg: &SmoteConfig,
    mut gap: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> Result<SmoteOutput, DataError> {
    if !(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0) {
        return Err(DataError::Invalid(format!(
            "target ratio {} not in (0, 1]",
            cfg.target_ratio
        )));
    }
    let minority = data.minority_indices();
    if cfg.k == 0 || minority.len() <= cfg.k {
        return Err(DataError::Invalid(format!(
            "SMOTE needs more than k = {} minority examples, found {}",
            cfg.k,
            minority.len()
        )));
    }
    let stats = imbalance_stats(data);
    let majority = stats.total - stats.minority_count;
    let wanted = (cfg.target_ratio * majority as f64).ceil() as usize;
    let needed = wanted.saturating_sub(stats.minority_count);

    let mut rng = seed::rng(cfg.seed);
    let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; minority.len()];
    let mut out = data.clone();
    let mut provenance = Vec::with_capacity(needed);
    for s in 0..needed {
        let slot = s % minority.len();
        let parent = minority[slot];
        if neighbours[slot].is_none() {
            neighbours[slot] = Some(knn_among(data, &minority, parent, cfg.k)?);
        }
        let nn = neighbours[slot].as_ref().expect("filled above");
        let neighbor = nn[rng.gen_range(0..nn.len())];
        let r = gap(&mut rng);
        let xi = &data.examples()[parent].features;
        let xj = &data.examples()[neighbor].features;
        let features = xi.iter().zip(xj).map(|(a, b)| a + (b - a) * r).collect();
        out.push_unchecked(Example::new(features, MINORITY));
        provenance.push(Synthesis {
            parent,
            neighbor,
            gap: r,
        });
    }
    Ok(SmoteOutput {
        dataset: out,
        provenance,
    })
}
