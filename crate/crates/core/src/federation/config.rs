use crate::data::{PartitionMode, SmoteConfig};
use crate::model::TrainConfig;
use crate::selection::{PolicyKind, SelectionPolicy};
use crate::valuation::TmcParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValuationMode {
    Exact,
    Tmc,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValuationConfig {
    pub mode: ValuationMode,
    /// TMC parameters; the seed is re-derived per round from the master seed.
    pub tmc: TmcParams,
}

impl Default for ValuationConfig {
    fn default() -> Self {
        ValuationConfig {
            mode: ValuationMode::Exact,
            tmc: TmcParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    /// Panel size; must be odd.
    pub count: usize,
    pub accuracy_floor: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            count: 3,
            accuracy_floor: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    pub skew: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            mode: PartitionMode::Iid,
            skew: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub num_orgs: usize,
    pub rounds: usize,
    pub policy: SelectionPolicy,
    pub train: TrainConfig,
    /// Hidden layer widths of the classifier; empty means logistic regression.
    pub hidden_layers: Vec<usize>,
    pub train_fraction: f64,
    pub partition: PartitionConfig,
    /// Per-organization SMOTE rebalancing; seeds are derived per shard.
    pub smote: Option<SmoteConfig>,
    pub valuation: ValuationConfig,
    /// Stop once global accuracy on the server test set reaches this value.
    pub accuracy_target: Option<f64>,
    pub validators: ValidatorConfig,
    pub master_seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_orgs: 30,
            rounds: 100,
            policy: SelectionPolicy::default(),
            train: TrainConfig::default(),
            hidden_layers: vec![16],
            train_fraction: 0.8,
            partition: PartitionConfig::default(),
            smote: Some(SmoteConfig::default()),
            valuation: ValuationConfig::default(),
            accuracy_target: None,
            validators: ValidatorConfig::default(),
            master_seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_orgs == 0 {
            return Err("num_orgs must be positive".into());
        }
        if self.rounds == 0 {
            return Err("rounds must be positive".into());
        }
        if self.policy.k == 0 || self.policy.k > self.num_orgs {
            return Err(format!(
                "policy.k = {} must be in 1..={}",
                self.policy.k, self.num_orgs
            ));
        }
        if self.policy.exploration_period == 0 {
            return Err("policy.exploration_period must be positive".into());
        }
        if self.policy.kind == PolicyKind::Contribution && self.valuation.mode == ValuationMode::Off {
            return Err("contribution selection needs valuation enabled".into());
        }
        self.train.validate().map_err(|e| e.to_string())?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err("train_fraction must be in (0, 1)".into());
        }
        if let Some(t) = self.accuracy_target {
            if !(0.0..1.0).contains(&t) {
                return Err(format!("accuracy_target {t} not in [0, 1)"));
            }
        }
        if self.validators.count.is_multiple_of(2) {
            return Err("validators.count must be odd".into());
        }
        if let Some(s) = &self.smote {
            if s.k == 0 || !(s.target_ratio > 0.0 && s.target_ratio <= 1.0) {
                return Err("smote.k must be positive and smote.target_ratio in (0, 1]".into());
            }
        }
        if self.hidden_layers.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_width: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(input_width);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(1);
        dims
    }
}
