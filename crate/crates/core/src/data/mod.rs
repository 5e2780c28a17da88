//! Tabular binary-classification data: CSV ingestion, standardization,
//! stratified splitting, partitioning across organizations, imbalance
//! statistics, and minority-class nearest neighbours.

mod smote;
pub mod synthetic;

pub use smote::{smote, smote_with_provenance, SmoteConfig, SmoteOutput, Synthesis};

use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Label value of the minority (fraud) class.
pub const MINORITY: u8 = 1;
/// Name of the label column in CSV input.
pub const LABEL_COLUMN: &str = "Class";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header has no `{LABEL_COLUMN}` column")]
    MissingLabelColumn,
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: cannot parse {value:?} as a number")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: value is not finite")]
    NonFinite { line: u64, column: String },
    #[error("line {line}: label {value:?} is not 0 or 1")]
    BadLabel { line: u64, value: String },
    #[error("example {index}: width {found} does not match schema width {expected}")]
    Width {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("example {index}: invalid example ({reason})")]
    InvalidExample { index: usize, reason: &'static str },
    #[error("dataset is empty")]
    Empty,
    #[error("class {label} has {count} example(s); stratification needs at least 2")]
    Stratification { label: u8, count: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// One feature row with its binary label (1 = minority / fraud).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Self {
        Example { features, label }
    }

    pub fn is_minority(&self) -> bool {
        self.label == MINORITY
    }
}

/// An ordered collection of examples sharing one feature width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    width: usize,
}

impl Dataset {
    /// Builds a dataset, checking widths, finiteness and labels.
    pub fn new(width: usize, examples: Vec<Example>) -> Result<Self, DataError> {
        if width == 0 {
            return Err(DataError::Invalid("schema width must be positive".into()));
        }
        for (index, ex) in examples.iter().enumerate() {
            if ex.features.len() != width {
                return Err(DataError::Width {
                    index,
                    expected: width,
                    found: ex.features.len(),
                });
            }
            if ex.label > 1 {
                return Err(DataError::InvalidExample {
                    index,
                    reason: "label must be 0 or 1",
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidExample {
                    index,
                    reason: "non-finite feature",
                });
            }
        }
        Ok(Dataset { examples, width })
    }

    /// Builds a dataset from parallel feature rows and labels.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, DataError> {
        if rows.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = rows.first().map(Vec::len).ok_or(DataError::Empty)?;
        let examples = rows
            .into_iter()
            .zip(labels)
            .map(|(f, l)| Example::new(f, l))
            .collect();
        Dataset::new(width, examples)
    }

    pub fn empty(width: usize) -> Self {
        Dataset {
            examples: Vec::new(),
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, index: usize) -> Option<&Example> {
        self.examples.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    /// New dataset holding clones of the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            width: self.width,
        }
    }

    /// Concatenation of `self` and `other`; widths must agree.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DataError> {
        if self.width != other.width {
            return Err(DataError::Invalid(format!(
                "cannot concatenate widths {} and {}",
                self.width, other.width
            )));
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Ok(Dataset {
            examples,
            width: self.width,
        })
    }

    pub(crate) fn push_unchecked(&mut self, ex: Example) {
        debug_assert_eq!(ex.features.len(), self.width);
        self.examples.push(ex);
    }

    /// Indices of minority-class examples, ascending.
    pub fn minority_indices(&self) -> Vec<usize> {
        self.class_indices(MINORITY)
    }

    fn class_indices(&self, label: u8) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;
    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// Per-column affine standardization (zero mean, unit variance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and population standard deviations. Constant
    /// columns get a unit scale so they map to zero.
    pub fn fit(data: &Dataset) -> Result<Self, DataError> {
        if data.is_empty() {
            return Err(DataError::Empty);
        }
        let n = data.len() as f64;
        let w = data.width();
        let mut means = vec![0.0; w];
        for ex in data {
            for (m, v) in means.iter_mut().zip(&ex.features) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; w];
        for ex in data {
            for ((s, v), m) in vars.iter_mut().zip(&ex.features).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let examples = data
            .iter()
            .map(|ex| {
                let features = ex
                    .features
                    .iter()
                    .zip(self.means.iter().zip(&self.stds))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect();
                Example::new(features, ex.label)
            })
            .collect();
        Dataset {
            examples,
            width: data.width,
        }
    }
}

/// Reads a header-driven CSV (feature columns plus a `Class` label column)
/// without any rescaling.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv_from(file)
}

/// Same as [`read_csv`] over any reader.
pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_col = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or(DataError::MissingLabelColumn)?;
    let width = header.len() - 1;
    if width == 0 {
        return Err(DataError::Invalid("no feature columns".into()));
    }
    let mut examples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(DataError::Arity {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut features = Vec::with_capacity(width);
        let mut label = 0u8;
        for (col, cell) in record.iter().enumerate() {
            if col == label_col {
                label = match cell.parse::<f64>() {
                    Ok(0.0) => 0,
                    Ok(1.0) => 1,
                    _ => {
                        return Err(DataError::BadLabel {
                            line,
                            value: cell.to_owned(),
                        })
                    }
                };
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    line,
                    column: header[col].clone(),
                    value: cell.to_owned(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        line,
                        column: header[col].clone(),
                    });
                }
                features.push(v);
            }
        }
        examples.push(Example::new(features, label));
    }
    Ok(Dataset { examples, width })
}

/// Reads a CSV and standardizes every feature column using statistics of
/// this file. The fitted standardizer is returned for reuse on other data.
pub fn load_csv(path: impl AsRef<Path>) -> Result<(Dataset, Standardizer), DataError> {
    let raw = read_csv(path)?;
    let scaler = Standardizer::fit(&raw)?;
    Ok((scaler.transform(&raw), scaler))
}

/// Stratified split into (train, test). Each class contributes
/// `round(n_c * train_fraction)` examples to the training half, clamped so
/// both halves keep at least one example of every class. Both halves keep
/// the original relative order.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut train_idx = Vec::with_capacity(data.len());
    let mut test_idx = Vec::with_capacity(data.len());
    for label in [0u8, 1u8] {
        let mut idx = data.class_indices(label);
        if idx.len() < 2 {
            return Err(DataError::Stratification {
                label,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let take = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// How training data is distributed over organizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    Iid,
    LabelSkew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub num_orgs: usize,
    pub mode: PartitionMode,
    /// Fraction of minority examples concentrated in the first
    /// `ceil(num_orgs / 3)` shards (label-skew mode only).
    pub skew: f64,
    pub seed: u64,
}

/// Splits `data` into `plan.num_orgs` disjoint shards whose union is `data`.
///
/// * iid: seeded shuffle, then near-equal contiguous slices.
/// * label-skew: majority examples are sliced as in iid; a `skew` fraction of
///   the minority examples is dealt round-robin to the first
///   `ceil(num_orgs / 3)` shards and the rest round-robin to the remaining
///   shards.
///
/// Examples inside a shard keep their original relative order.
pub fn partition(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>, DataError> {
    let n_orgs = plan.num_orgs;
    if n_orgs == 0 {
        return Err(DataError::Invalid("num_orgs must be positive".into()));
    }
    if n_orgs > data.len() {
        return Err(DataError::Invalid(format!(
            "{} organizations but only {} examples",
            n_orgs,
            data.len()
        )));
    }
    let mut rng = seed::rng(plan.seed);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_orgs];
    match plan.mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            deal_slices(&idx, &mut buckets);
        }
        PartitionMode::LabelSkew => {
            if !(0.0..=1.0).contains(&plan.skew) {
                return Err(DataError::Invalid(format!("skew {} not in [0, 1]", plan.skew)));
            }
            let mut major = data.class_indices(0);
            let mut minor = data.class_indices(MINORITY);
            major.shuffle(&mut rng);
            minor.shuffle(&mut rng);
            deal_slices(&major, &mut buckets);
            let head = n_orgs.div_ceil(3);
            let concentrated = ((minor.len() as f64) * plan.skew).round() as usize;
            for (j, &i) in minor[..concentrated].iter().enumerate() {
                buckets[j % head].push(i);
            }
            let tail: Vec<usize> = if head < n_orgs {
                (head..n_orgs).collect()
            } else {
                (0..n_orgs).collect()
            };
            for (j, &i) in minor[concentrated..].iter().enumerate() {
                buckets[tail[j % tail.len()]].push(i);
            }
        }
    }
    Ok(buckets
        .into_iter()
        .map(|mut b| {
            b.sort_unstable();
            data.subset(&b)
        })
        .collect())
}

fn deal_slices(idx: &[usize], buckets: &mut [Vec<usize>]) {
    let k = buckets.len();
    let base = idx.len() / k;
    let extra = idx.len() % k;
    let mut start = 0;
    for (b, bucket) in buckets.iter_mut().enumerate() {
        let len = base + usize::from(b < extra);
        bucket.extend_from_slice(&idx[start..start + len]);
        start += len;
    }
}

/// Class balance of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceStats {
    pub minority_count: usize,
    pub total: usize,
    /// Fraction of examples carrying the minority label.
    pub ratio: f64,
    /// minority / majority; infinite when there is no majority example.
    pub minority_to_majority: f64,
}

pub fn imbalance_stats(data: &Dataset) -> ImbalanceStats {
    let total = data.len();
    let minority_count = data.iter().filter(|e| e.is_minority()).count();
    let majority = total - minority_count;
    let ratio = if total == 0 {
        0.0
    } else {
        minority_count as f64 / total as f64
    };
    let minority_to_majority = if majority == 0 {
        if minority_count == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        minority_count as f64 / majority as f64
    };
    ImbalanceStats {
        minority_count,
        total,
        ratio,
        minority_to_majority,
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dataset indices of the `k` minority examples nearest (Euclidean) to the
/// minority example at `point_index`, excluding the point itself. Ties go to
/// the lower index.
pub fn knn_minority(data: &Dataset, point_index: usize, k: usize) -> Result<Vec<usize>, DataError> {
    let minority = data.minority_indices();
    knn_among(data, &minority, point_index, k)
}

pub(crate) fn knn_among(
    data: &Dataset,
    minority: &[usize],
    point_index: usize,
    k: usize,
) -> Result<Vec<usize>, DataError> {
    let query = data
        .get(point_index)
        .ok_or_else(|| DataError::Invalid(format!("index {point_index} out of range")))?;
    if !query.is_minority() {
        return Err(DataError::Invalid(format!(
            "example {point_index} is not a minority example"
        )));
    }
    if k == 0 {
        return Err(DataError::Invalid("k must be positive".into()));
    }
    if k >= minority.len() {
        return Err(DataError::Invalid(format!(
            "k = {k} but the minority class has only {} examples",
            minority.len()
        )));
    }
    let mut cands: Vec<(f64, usize)> = minority
        .iter()
        .filter(|&&i| i != point_index)
        .map(|&i| (squared_distance(&query.features, &data.examples[i].features), i))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(cands.into_iter().take(k).map(|(_, i)| i).collect())
}
