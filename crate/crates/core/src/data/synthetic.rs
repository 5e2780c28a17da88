//! Two-Gaussian generator emitting the credit-card CSV schema.

use super::{DataError, Dataset, Example, LABEL_COLUMN};
use crate::seed;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub width: usize,
    pub minority_fraction: f64,
    /// Euclidean distance between the two class means, in units of the
    /// (unit) per-feature standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2000,
            width: 30,
            minority_fraction: 0.02,
            separation: 3.0,
            seed: 0,
        }
    }
}

/// Column names: `Time, V1..V{w-2}, Amount` for widths of at least 3,
/// otherwise `V1..Vw`, followed by the label column.
pub fn column_names(width: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(width + 1);
    if width >= 3 {
        cols.push("Time".to_owned());
        cols.extend((1..=width - 2).map(|i| format!("V{i}")));
        cols.push("Amount".to_owned());
    } else {
        cols.extend((1..=width).map(|i| format!("V{i}")));
    }
    cols.push(LABEL_COLUMN.to_owned());
    cols
}

/// Draws `n` rows: majority ~ N(0, I), minority ~ N(mu, I) with
/// `|mu| = separation` along the all-ones direction. Exactly
/// `round(n * minority_fraction)` rows are minority; row order is shuffled.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if !(spec.minority_fraction > 0.0 && spec.minority_fraction < 0.5) {
        return Err(DataError::Invalid(format!(
            "minority fraction {} not in (0, 0.5)",
            spec.minority_fraction
        )));
    }
    if spec.n == 0 || spec.width == 0 {
        return Err(DataError::Invalid("n and width must be positive".into()));
    }
    if !spec.separation.is_finite() || spec.separation < 0.0 {
        return Err(DataError::Invalid("separation must be finite and >= 0".into()));
    }
    let mut rng = seed::rng(seed::derive_seed(spec.seed, &[seed::tag::GENERATE]));
    let n_minor = (spec.n as f64 * spec.minority_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..spec.n).map(|i| u8::from(i < n_minor)).collect();
    labels.shuffle(&mut rng);
    let shift = spec.separation / (spec.width as f64).sqrt();
    let examples = labels
        .into_iter()
        .map(|label| {
            let offset = if label == 1 { shift } else { 0.0 };
            let features = (0..spec.width)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + offset
                })
                .collect();
            Example::new(features, label)
        })
        .collect();
    Dataset::new(spec.width, examples)
}

/// Writes a dataset in the CSV schema read by [`super::read_csv`].
pub fn write_csv(data: &Dataset, out: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(column_names(data.width()))?;
    for ex in data {
        let mut rec: Vec<String> = ex.features.iter().map(|v| v.to_string()).collect();
        rec.push(ex.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_csv_file(data: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(data, std::io::BufWriter::new(file))
}
