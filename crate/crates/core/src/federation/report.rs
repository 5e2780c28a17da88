use crate::ledger::Digest256;
use crate::model::Metrics;
use crate::valuation::ShapleyResult;
use crate::OrgId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

/// Metrics and accounting for one committed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    /// Organizations whose updates the policy selected for aggregation.
    pub selected: BTreeSet<OrgId>,
    /// Organizations that trained and submitted this round.
    pub trained: usize,
    /// Submissions the winning validator rejected.
    pub rejected: BTreeSet<OrgId>,
    pub faulty_validators: Vec<u32>,
    /// Global model on the server test set.
    pub global_metrics: Metrics,
    /// Global model on each organization's own data.
    pub per_org_metrics: BTreeMap<OrgId, Metrics>,
    pub shapley: Option<ShapleyResult>,
    pub global_digest: Digest256,
    pub bytes_on_chain: u64,
    pub bytes_off_chain: u64,
    /// The round was re-run with random selection after a failed vote.
    pub retried: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RoundReport {
    /// Mean accuracy of the global model over organizations' own data.
    pub fn org_mean_accuracy(&self) -> f64 {
        if self.per_org_metrics.is_empty() {
            return 0.0;
        }
        self.per_org_metrics.values().map(|m| m.accuracy).sum::<f64>() / self.per_org_metrics.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub reports: Vec<RoundReport>,
    pub final_model_digest: Digest256,
    /// 1-based count of rounds until global accuracy first reached 90% of
    /// the final round's accuracy.
    pub rounds_to_threshold: Option<usize>,
    pub contributions: BTreeMap<OrgId, f64>,
}

/// Fraction of the final accuracy that defines rounds-to-threshold.
pub const THRESHOLD_FRACTION: f64 = 0.9;

impl RunResult {
    pub fn new(
        reports: Vec<RoundReport>,
        final_model_digest: Digest256,
        contributions: BTreeMap<OrgId, f64>,
    ) -> Self {
        let rounds_to_threshold = rounds_to_threshold(&reports);
        RunResult {
            reports,
            final_model_digest,
            rounds_to_threshold,
            contributions,
        }
    }

    pub fn last(&self) -> Option<&RoundReport> {
        self.reports.last()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.last().map_or(0.0, |r| r.global_metrics.accuracy)
    }

    pub fn final_org_accuracy(&self) -> f64 {
        self.last().map_or(0.0, RoundReport::org_mean_accuracy)
    }
}

fn rounds_to_threshold(reports: &[RoundReport]) -> Option<usize> {
    let target = THRESHOLD_FRACTION * reports.last()?.global_metrics.accuracy;
    reports
        .iter()
        .position(|r| r.global_metrics.accuracy >= target)
        .map(|p| p + 1)
}
