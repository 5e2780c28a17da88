//! Experiment harness behind the command-line front end.
//!
//! An [`ExperimentSpec`] names a data source, a set of selection policies, an
//! optional sweep over local epochs and batch sizes, and the federation
//! settings shared by every run. [`cmd_run`] executes one federation per
//! (policy × sweep point) and writes, for each run, a per-round metrics CSV,
//! the round reports as JSON lines and the exported ledger, plus a comparison
//! summary. Every file except the ledger export starts with the hash of the
//! configuration that produced it.

use crate::data::synthetic::{self, SyntheticSpec};
use crate::data::{self, DataError, Dataset};
use crate::federation::{self, FederationConfig, FederationError, RunResult};
use crate::ledger::{export_chain, import_chain, ChainFault, Digest256, LedgerError};
use crate::selection::PolicyKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Column order of the per-round metrics files.
pub const ROUND_COLUMNS: [&str; 7] = [
    "round",
    "accuracy",
    "loss",
    "f1",
    "precision",
    "bytes_on_chain",
    "bytes_off_chain",
];

/// Column order of the comparison summary.
pub const SUMMARY_COLUMNS: [&str; 8] = [
    "policy",
    "epochs",
    "batch_size",
    "rounds",
    "final_accuracy",
    "final_f1",
    "final_org_accuracy",
    "rounds_to_threshold",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{label}: {source}")]
    Run { label: String, source: FederationError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// A CSV with a `Class` label column; features are standardized on load.
    Csv(PathBuf),
    /// Two Gaussian classes in the credit-card schema.
    Synthetic(SyntheticSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Optional grid over local training settings. An absent list means the
/// federation's own value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub epochs: Option<Vec<usize>>,
    pub batch_size: Option<Vec<usize>>,
}

impl Sweep {
    /// The (epochs, batch size) points to run, epochs-major.
    pub fn points(&self, base: &FederationConfig) -> Vec<(usize, usize)> {
        let epochs = self.epochs.clone().unwrap_or_else(|| vec![base.train.epochs]);
        let batches = self
            .batch_size
            .clone()
            .unwrap_or_else(|| vec![base.train.batch_size]);
        epochs
            .iter()
            .flat_map(|&e| batches.iter().map(move |&b| (e, b)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub sweep: Sweep,
    pub policies_to_compare: Vec<PolicyKind>,
    pub output_dir: PathBuf,
    /// Rebalance every organization's shard with SMOTE (`federation.smote`
    /// holds its parameters).
    pub smote: bool,
    /// Run sweep points concurrently. Results do not depend on this.
    pub parallel: bool,
    pub federation: FederationConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: DataSource::default(),
            sweep: Sweep::default(),
            policies_to_compare: vec![PolicyKind::Random, PolicyKind::Greedy, PolicyKind::Contribution],
            output_dir: PathBuf::from("out"),
            smote: true,
            parallel: false,
            federation: FederationConfig::default(),
        }
    }
}

/// Hashed view of a spec: everything that can change results. The output
/// location and the parallel flag are excluded.
#[derive(Serialize)]
struct HashedSpec<'a> {
    data: &'a DataSource,
    sweep: &'a Sweep,
    policies_to_compare: &'a [PolicyKind],
    smote: bool,
    federation: &'a FederationConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::Invalid(m));
        if let Some(e) = &self.sweep.epochs {
            if e.is_empty() || e.contains(&0) {
                return invalid("sweep.epochs must be a non-empty list of positive values".into());
            }
        }
        if let Some(b) = &self.sweep.batch_size {
            if b.is_empty() || b.contains(&0) {
                return invalid("sweep.batch_size must be a non-empty list of positive values".into());
            }
        }
        if self.policies_to_compare.is_empty() {
            return invalid("policies_to_compare must not be empty".into());
        }
        let mut seen = self.policies_to_compare.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.policies_to_compare.len() {
            return invalid("policies_to_compare lists a policy twice".into());
        }
        if let DataSource::Synthetic(s) = &self.data {
            validate_synthetic(s)?;
        }
        for &kind in &self.policies_to_compare {
            self.federation_for(
                kind,
                self.federation.train.epochs,
                self.federation.train.batch_size,
            )
            .validate()
            .map_err(|m| ExperimentError::Invalid(format!("federation: {m}")))?;
        }
        Ok(())
    }

    /// Federation configuration of one run.
    pub fn federation_for(&self, kind: PolicyKind, epochs: usize, batch_size: usize) -> FederationConfig {
        let mut cfg = self.federation.clone();
        cfg.policy.kind = kind;
        cfg.train.epochs = epochs;
        cfg.train.batch_size = batch_size;
        if !self.smote {
            cfg.smote = None;
        }
        cfg
    }

    /// SHA-256 over the canonical JSON of the result-relevant settings.
    pub fn config_hash(&self) -> Digest256 {
        let view = HashedSpec {
            data: &self.data,
            sweep: &self.sweep,
            policies_to_compare: &self.policies_to_compare,
            smote: self.smote,
            federation: &self.federation,
        };
        let json = serde_json::to_vec(&view).expect("configuration serializes");
        Digest256::of(&json)
    }
}

fn validate_synthetic(s: &SyntheticSpec) -> Result<(), ExperimentError> {
    if !(s.minority_fraction > 0.0 && s.minority_fraction < 0.5) {
        return Err(ExperimentError::Invalid(format!(
            "data.synthetic.minority_fraction = {} must be in (0, 0.5)",
            s.minority_fraction
        )));
    }
    Ok(())
}

/// Writes a synthetic credit-card-schema CSV.
pub fn cmd_generate(spec: &SyntheticSpec, path: impl AsRef<Path>) -> Result<Dataset, ExperimentError> {
    validate_synthetic(spec)?;
    let data = synthetic::generate(spec)?;
    if let Some(dir) = path.as_ref().parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    synthetic::write_csv_file(&data, path)?;
    Ok(data)
}

/// One finished run of the comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub result: RunResult,
}

impl RunRecord {
    /// File stem shared by this run's outputs.
    pub fn stem(&self) -> String {
        format!("{}_e{}_b{}", self.policy, self.epochs, self.batch_size)
    }
}

/// Outcome of [`cmd_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub config_hash: Digest256,
    pub runs: Vec<RunRecord>,
    /// Every file written, in write order.
    pub files: Vec<PathBuf>,
}

/// Loads the data source. CSV input is standardized; synthetic data is
/// already on unit scale.
pub fn load_data(source: &DataSource) -> Result<Dataset, ExperimentError> {
    Ok(match source {
        DataSource::Csv(path) => data::load_csv(path)?.0,
        DataSource::Synthetic(s) => synthetic::generate(s)?,
    })
}

/// Runs every (policy × sweep point) federation and writes the metric files.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunOutput, ExperimentError> {
    spec.validate()?;
    let data = load_data(&spec.data)?;
    let points: Vec<(PolicyKind, usize, usize)> = spec
        .sweep
        .points(&spec.federation)
        .into_iter()
        .flat_map(|(e, b)| spec.policies_to_compare.iter().map(move |&p| (p, e, b)))
        .collect();
    let threads = if spec.parallel { 0 } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let run_one = |&(policy, epochs, batch_size): &(PolicyKind, usize, usize)| {
        let cfg = spec.federation_for(policy, epochs, batch_size);
        let mut state = federation::init_round0(&cfg, &data).map_err(|source| ExperimentError::Run {
            label: format!("{policy} epochs={epochs} batch={batch_size}"),
            source,
        })?;
        let result = state.run().map_err(|source| ExperimentError::Run {
            label: format!("{policy} epochs={epochs} batch={batch_size}"),
            source,
        })?;
        let mut chain = Vec::new();
        export_chain(state.chain().blocks(), &mut chain)?;
        Ok::<_, ExperimentError>((
            RunRecord {
                policy,
                epochs,
                batch_size,
                result,
            },
            chain,
        ))
    };
    let finished: Vec<(RunRecord, Vec<u8>)> = pool.install(|| {
        if spec.parallel {
            points.par_iter().map(run_one).collect::<Result<_, _>>()
        } else {
            points.iter().map(run_one).collect::<Result<_, _>>()
        }
    })?;

    let hash = spec.config_hash();
    fs::create_dir_all(&spec.output_dir)?;
    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (record, chain) in finished {
        let stem = record.stem();
        let path = spec.output_dir.join(format!("{stem}.csv"));
        write_round_csv(&path, &hash, &record.result)?;
        files.push(path);
        let path = spec.output_dir.join(format!("{stem}.rounds.jsonl"));
        write_reports(&path, &hash, &record.result)?;
        files.push(path);
        let path = spec.output_dir.join(format!("{stem}.chain.jsonl"));
        fs::write(&path, chain)?;
        files.push(path);
        runs.push(record);
    }
    let path = spec.output_dir.join("summary.csv");
    write_summary(&path, &hash, &runs)?;
    files.push(path);
    Ok(RunOutput {
        config_hash: hash,
        runs,
        files,
    })
}

fn header_line(out: &mut impl Write, hash: &Digest256) -> std::io::Result<()> {
    writeln!(out, "# config_hash: {}", hash.to_hex())
}

/// Per-round metrics of one run; the first line is a `#` comment with the
/// configuration hash.
pub fn write_round_csv(path: &Path, hash: &Digest256, result: &RunResult) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    header_line(&mut out, hash)?;
    writeln!(out, "{}", ROUND_COLUMNS.join(","))?;
    for r in &result.reports {
        let m = &r.global_metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, m.accuracy, m.loss, m.f1, m.precision, r.bytes_on_chain, r.bytes_off_chain
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Round reports as JSON lines, followed by a final summary record.
pub fn write_reports(path: &Path, hash: &Digest256, result: &RunResult) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    header_line(&mut out, hash)?;
    for r in &result.reports {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        writeln!(out)?;
    }
    let summary = serde_json::json!({
        "final_model_digest": result.final_model_digest,
        "rounds_to_threshold": result.rounds_to_threshold,
        "contributions": result.contributions,
    });
    writeln!(out, "{summary}")?;
    out.flush()?;
    Ok(())
}

/// Comparison table: one row per run.
pub fn write_summary(path: &Path, hash: &Digest256, runs: &[RunRecord]) -> Result<(), ExperimentError> {
    let mut out = BufWriter::new(File::create(path)?);
    header_line(&mut out, hash)?;
    writeln!(out, "{}", SUMMARY_COLUMNS.join(","))?;
    for run in runs {
        let r = &run.result;
        let f1 = r.last().map_or(0.0, |l| l.global_metrics.f1);
        let rtt = r.rounds_to_threshold.map_or(String::new(), |v| v.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            run.policy,
            run.epochs,
            run.batch_size,
            r.reports.len(),
            r.final_accuracy(),
            f1,
            r.final_org_accuracy(),
            rtt
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Re-validates an exported ledger. An empty file is a valid empty chain.
/// Returns the number of blocks, or the first fault.
pub fn cmd_validate(path: impl AsRef<Path>) -> Result<Result<usize, ChainFault>, ExperimentError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| ExperimentError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let blocks = import_chain(BufReader::new(file))?;
    Ok(crate::ledger::validate_chain(&blocks).map(|()| blocks.len()))
}
