//! Round orchestration.
//!
//! Each round: select organizations, train locally from the current global
//! model (in parallel), publish payloads off-chain and digests on-chain,
//! let every validator verify the updates and aggregate the ones it
//! accepted, adopt the strict-majority aggregate as the next global model,
//! value the verified submissions, and seal a block with the global digest
//! and the round's contributions.

mod config;
mod report;

pub use config::{FederationConfig, PartitionConfig, ValidatorConfig, ValuationConfig, ValuationMode};
pub use report::{RoundReport, RunResult};

use crate::data::{self, imbalance_stats, DataError, Dataset, PartitionPlan, SmoteConfig};
use crate::ledger::{
    encode_model, majority_global, verify_local_update, Chain, ChainFault, ContentStore, Digest256,
    LedgerError, LocalUpdateTx, ValidatorId, ValidatorPanel,
};
use crate::model::{self, Metrics, ModelError, ModelParams, TrainConfig};
use crate::seed::{derive_seed, tag};
use crate::selection::{self, PolicyKind, SelectionError, SelectionPolicy};
use crate::valuation::{self, CoalitionGame, ShapleyResult, UtilityGame, ValuationError};
use crate::OrgId;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;
use thiserror::Error;

/// Decision threshold used for every reported metric.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("expected round {expected}, got {found}")]
    RoundMismatch { expected: u64, found: u64 },
    #[error("round {round} aborted: validators reached no majority after a random-selection retry")]
    ConsensusAborted { round: u64, partial: Vec<RoundReport> },
    #[error("ledger failed validation at the end of the run: {0}")]
    ChainInvalid(ChainFault),
}

/// How an organization behaves when asked for a local update. Anything
/// other than `Honest` is fault injection for tests and experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrgBehavior {
    #[default]
    Honest,
    /// Submits a model whose first weight is NaN.
    NanWeights,
    /// Trains on its shard with every label inverted.
    LabelFlip,
    /// Submits the global model it received, unchanged.
    Stale,
}

/// Mutable state of a federation between rounds.
pub struct FederationState {
    cfg: FederationConfig,
    policy_seed: u64,
    server_test: Dataset,
    /// Training shards after optional rebalancing.
    shards: Vec<Dataset>,
    /// Original shards, used for organization-level metrics.
    local_data: Vec<Dataset>,
    panel: ValidatorPanel,
    store: ContentStore,
    chain: Chain,
    global: ModelParams,
    global_digest: Digest256,
    round: u64,
    contributions: BTreeMap<OrgId, f64>,
    history: Vec<ShapleyResult>,
    behaviors: BTreeMap<OrgId, OrgBehavior>,
    byzantine_validators: BTreeSet<ValidatorId>,
}

/// Splits, partitions, optionally rebalances, initializes `w0` and writes
/// the genesis block.
pub fn init_round0(cfg: &FederationConfig, data: &Dataset) -> Result<FederationState, FederationError> {
    cfg.validate().map_err(FederationError::Config)?;
    let stats = imbalance_stats(data);
    if stats.minority_count == 0 || stats.minority_count == stats.total {
        return Err(FederationError::Config("data must contain both classes".into()));
    }
    let master = cfg.master_seed;
    let (train, server_test) = data::split(data, cfg.train_fraction, derive_seed(master, &[tag::SPLIT]))?;
    let plan = PartitionPlan {
        num_orgs: cfg.num_orgs,
        mode: cfg.partition.mode,
        skew: cfg.partition.skew,
        seed: derive_seed(master, &[tag::PARTITION]),
    };
    let local_data = data::partition(&train, &plan)?;
    let shards = local_data
        .par_iter()
        .enumerate()
        .map(|(org, shard)| match &cfg.smote {
            Some(s) => rebalance(shard, s, derive_seed(master, &[tag::SMOTE, org as u64])),
            None => Ok(shard.clone()),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dims = cfg.layer_dims(data.width());
    let global = ModelParams::init_uniform(dims, derive_seed(master, &[tag::INIT]))?;
    let panel = ValidatorPanel::carve(
        &server_test,
        cfg.validators.count,
        cfg.validators.accuracy_floor,
        derive_seed(master, &[tag::VALIDATORS]),
    )?;
    let store = ContentStore::new();
    let global_digest = store.put(&encode_model(&global));
    let mut chain = Chain::new();
    chain.push(Vec::new(), global_digest, BTreeMap::new(), BTreeMap::new())?;

    Ok(FederationState {
        cfg: cfg.clone(),
        policy_seed: derive_seed(master, &[tag::SELECT, cfg.policy.seed]),
        server_test,
        shards,
        local_data,
        panel,
        store,
        chain,
        global,
        global_digest,
        round: 0,
        contributions: BTreeMap::new(),
        history: Vec::new(),
        behaviors: BTreeMap::new(),
        byzantine_validators: BTreeSet::new(),
    })
}

/// SMOTE on one shard. Shards with fewer than two minority examples are left
/// as they are; shards with at most `k` use `k = minority - 1`.
fn rebalance(shard: &Dataset, cfg: &SmoteConfig, seed: u64) -> Result<Dataset, DataError> {
    let minority = imbalance_stats(shard).minority_count;
    if minority < 2 || shard.len() == minority {
        return Ok(shard.clone());
    }
    let s = SmoteConfig {
        k: cfg.k.min(minority - 1),
        target_ratio: cfg.target_ratio,
        seed,
    };
    data::smote(shard, &s)
}

/// One organization's submission inside a round.
struct Submission {
    org: OrgId,
    model: ModelParams,
    tx: LocalUpdateTx,
}

enum Attempt {
    Committed(Box<RoundReport>),
    NoMajority,
}

impl FederationState {
    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn global_digest(&self) -> Digest256 {
        self.global_digest
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn server_test(&self) -> &Dataset {
        &self.server_test
    }

    pub fn panel(&self) -> &ValidatorPanel {
        &self.panel
    }

    /// Training shards (after rebalancing), indexed by organization.
    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    /// Original shards, indexed by organization.
    pub fn local_data(&self) -> &[Dataset] {
        &self.local_data
    }

    pub fn contributions(&self) -> &BTreeMap<OrgId, f64> {
        &self.contributions
    }

    pub fn history(&self) -> &[ShapleyResult] {
        &self.history
    }

    pub fn orgs(&self) -> Vec<OrgId> {
        (0..self.cfg.num_orgs as u32).map(OrgId).collect()
    }

    pub fn set_behavior(&mut self, org: OrgId, behavior: OrgBehavior) {
        self.behaviors.insert(org, behavior);
    }

    /// A byzantine validator votes for a perturbed copy of its aggregate.
    pub fn set_byzantine_validator(&mut self, v: ValidatorId, byzantine: bool) {
        if byzantine {
            self.byzantine_validators.insert(v);
        } else {
            self.byzantine_validators.remove(&v);
        }
    }

    /// Replaces the training shards. Useful for constructed experiments.
    pub fn set_shards(&mut self, shards: Vec<Dataset>) -> Result<(), FederationError> {
        if shards.len() != self.cfg.num_orgs {
            return Err(FederationError::Config(format!(
                "{} shards for {} organizations",
                shards.len(),
                self.cfg.num_orgs
            )));
        }
        self.local_data = shards.clone();
        self.shards = shards;
        Ok(())
    }

    /// Training configuration an organization uses in round `t`.
    pub fn local_train_config(&self, t: u64, org: OrgId) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.cfg.master_seed, &[tag::TRAIN, t, u64::from(org.0)]),
            ..self.cfg.train.clone()
        }
    }

    /// Runs round `t`, which must be the next round.
    pub fn run_round(&mut self, t: u64) -> Result<RoundReport, FederationError> {
        if t != self.round {
            return Err(FederationError::RoundMismatch {
                expected: self.round,
                found: t,
            });
        }
        let started = Instant::now();
        let first = self.select(t)?;
        let report = match self.attempt(t, self.cfg.policy.kind, first, false)? {
            Attempt::Committed(r) => r,
            Attempt::NoMajority => {
                let retry_seed = derive_seed(self.cfg.master_seed, &[tag::RETRY, t]);
                let picked = selection::select_random(&self.orgs(), self.cfg.policy.k, retry_seed)?;
                match self.attempt(t, PolicyKind::Random, picked, true)? {
                    Attempt::Committed(r) => r,
                    Attempt::NoMajority => {
                        return Err(FederationError::ConsensusAborted {
                            round: t,
                            partial: Vec::new(),
                        })
                    }
                }
            }
        };
        let mut report = *report;
        report.wall_time = started.elapsed();
        self.round += 1;
        Ok(report)
    }

    /// Organizations that train this round. For greedy, every organization
    /// trains and the subset is chosen by the validators afterwards.
    fn select(&self, t: u64) -> Result<BTreeSet<OrgId>, FederationError> {
        let orgs = self.orgs();
        let k = self.cfg.policy.k;
        let picked = match self.cfg.policy.kind {
            PolicyKind::Random => {
                selection::select_random(&orgs, k, derive_seed(self.policy_seed, &[tag::SELECT, t]))?
            }
            PolicyKind::Greedy => orgs.into_iter().collect(),
            PolicyKind::Contribution => {
                let scores: BTreeMap<OrgId, f64> = orgs
                    .iter()
                    .map(|&o| (o, self.contributions.get(&o).copied().unwrap_or(0.0)))
                    .collect();
                let policy = SelectionPolicy {
                    seed: self.policy_seed,
                    ..self.cfg.policy.clone()
                };
                selection::select_by_contribution(&scores, k, t, &policy)?
            }
        };
        Ok(picked)
    }

    fn train_one(&self, t: u64, org: OrgId) -> Result<ModelParams, FederationError> {
        let shard = &self.shards[org.index()];
        let cfg = self.local_train_config(t, org);
        let mut m = match self.behaviors.get(&org).copied().unwrap_or_default() {
            OrgBehavior::Honest => model::local_train(&self.global, shard, &cfg)?,
            OrgBehavior::NanWeights => {
                let mut m = model::local_train(&self.global, shard, &cfg)?;
                m.weights_mut()[0] = f64::NAN;
                m
            }
            OrgBehavior::LabelFlip => {
                let flipped = Dataset::new(
                    shard.width(),
                    shard
                        .iter()
                        .map(|e| data::Example::new(e.features.clone(), 1 - e.label))
                        .collect(),
                )?;
                model::local_train(&self.global, &flipped, &cfg)?
            }
            OrgBehavior::Stale => self.global.clone(),
        };
        m.version = t;
        Ok(m)
    }

    fn attempt(
        &mut self,
        t: u64,
        kind: PolicyKind,
        trainees: BTreeSet<OrgId>,
        retried: bool,
    ) -> Result<Attempt, FederationError> {
        let trainees: Vec<OrgId> = trainees.into_iter().collect();
        let models = trainees
            .par_iter()
            .map(|&org| self.train_one(t, org))
            .collect::<Result<Vec<_>, _>>()?;
        let submissions: Vec<Submission> = trainees
            .iter()
            .zip(models)
            .map(|(&org, model)| {
                let bytes = encode_model(&model);
                let digest = self.store.put(&bytes);
                Submission {
                    org,
                    model,
                    tx: LocalUpdateTx {
                        round: t,
                        org_id: org,
                        model_digest: digest,
                        payload_bytes: bytes.len() as u64,
                    },
                }
            })
            .collect();

        // Every validator verifies every update, then aggregates what it accepted.
        let validators = self.panel.validators().to_vec();
        let accepted: BTreeMap<ValidatorId, Vec<usize>> = validators
            .par_iter()
            .map(|&v| {
                let ok = submissions
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| verify_local_update(&self.panel, v, &s.tx, &self.store).is_accepted())
                    .map(|(i, _)| i)
                    .collect();
                (v, ok)
            })
            .collect();
        let mut chosen: BTreeMap<ValidatorId, Vec<usize>> = BTreeMap::new();
        let mut candidates: BTreeMap<ValidatorId, ModelParams> = BTreeMap::new();
        for (&v, ok) in &accepted {
            let members = if kind == PolicyKind::Greedy {
                self.greedy_subset(t, &submissions, ok)?
            } else {
                ok.clone()
            };
            let mut candidate = ModelParams::average(members.iter().map(|&i| &submissions[i].model))
                .unwrap_or_else(|| self.global.clone());
            candidate.version = t + 1;
            if self.byzantine_validators.contains(&v) {
                for w in candidate.weights_mut() {
                    *w += 1e-3 * (f64::from(v) + 1.0);
                }
            }
            chosen.insert(v, members);
            candidates.insert(v, candidate);
        }
        let consensus = match majority_global(&self.panel, &candidates, &self.store) {
            Ok(c) => c,
            Err(LedgerError::NoMajority { .. }) => return Ok(Attempt::NoMajority),
            Err(e) => return Err(e.into()),
        };
        let winner = *consensus
            .votes
            .iter()
            .find(|(_, d)| **d == consensus.digest)
            .map(|(v, _)| v)
            .expect("winning digest has a voter");
        let verified: Vec<&Submission> = chosen[&winner].iter().map(|&i| &submissions[i]).collect();

        let shapley = self.value(t, &verified)?;
        let round_contrib = shapley.as_ref().map(|s| s.values.clone()).unwrap_or_default();
        if let Some(s) = &shapley {
            for (&o, &v) in &s.values {
                *self.contributions.entry(o).or_insert(0.0) += v;
            }
            self.history.push(s.clone());
        }

        let txs: Vec<LocalUpdateTx> = submissions.iter().map(|s| s.tx.clone()).collect();
        let bytes_off_chain: u64 = txs.iter().map(|tx| tx.payload_bytes).sum();
        let block = self
            .chain
            .push(txs, consensus.digest, consensus.votes.clone(), round_contrib)?;
        let bytes_on_chain = block.record_bytes() as u64;

        let mut global = consensus.model;
        global.version = t + 1;
        self.global = global;
        self.global_digest = consensus.digest;

        let global_metrics = model::evaluate(&self.global, &self.server_test, THRESHOLD)?;
        let per_org_metrics = self.org_metrics()?;
        let selected: BTreeSet<OrgId> = if kind == PolicyKind::Greedy {
            verified.iter().map(|s| s.org).collect()
        } else {
            trainees.iter().copied().collect()
        };
        let rejected: BTreeSet<OrgId> = submissions
            .iter()
            .enumerate()
            .filter(|(i, _)| !accepted[&winner].contains(i))
            .map(|(_, s)| s.org)
            .collect();
        Ok(Attempt::Committed(Box::new(RoundReport {
            round: t,
            selected,
            trained: trainees.len(),
            rejected,
            faulty_validators: consensus.faulty,
            global_metrics,
            per_org_metrics,
            shapley,
            global_digest: self.global_digest,
            bytes_on_chain,
            bytes_off_chain,
            retried,
            wall_time: Default::default(),
        })))
    }

    /// Greedy marginal-gain subset of a validator's accepted submissions.
    fn greedy_subset(
        &self,
        t: u64,
        subs: &[Submission],
        ok: &[usize],
    ) -> Result<Vec<usize>, FederationError> {
        if ok.len() <= self.cfg.policy.k {
            return Ok(ok.to_vec());
        }
        let pool: BTreeMap<OrgId, ModelParams> =
            ok.iter().map(|&i| (subs[i].org, subs[i].model.clone())).collect();
        let game = UtilityGame::new(t, self.global.clone(), pool, self.server_test.clone())?;
        let picked = selection::select_greedy(&game, self.cfg.policy.k)?;
        Ok(ok
            .iter()
            .copied()
            .filter(|&i| picked.contains(&subs[i].org))
            .collect())
    }

    fn value(&self, t: u64, verified: &[&Submission]) -> Result<Option<ShapleyResult>, FederationError> {
        if self.cfg.valuation.mode == ValuationMode::Off || verified.is_empty() {
            return Ok(None);
        }
        let subs: BTreeMap<OrgId, ModelParams> = verified.iter().map(|s| (s.org, s.model.clone())).collect();
        let game = UtilityGame::new(t, self.global.clone(), subs, self.server_test.clone())?;
        let result = match self.cfg.valuation.mode {
            ValuationMode::Exact => valuation::exact_shapley(&game)?,
            ValuationMode::Tmc => {
                let params = valuation::TmcParams {
                    seed: derive_seed(self.cfg.master_seed, &[tag::SHAPLEY, t]),
                    ..self.cfg.valuation.tmc.clone()
                };
                valuation::tmc_shapley(&game, &params)?
            }
            ValuationMode::Off => unreachable!(),
        };
        debug_assert_eq!(result.values.len(), game.num_players());
        Ok(Some(result))
    }

    fn org_metrics(&self) -> Result<BTreeMap<OrgId, Metrics>, FederationError> {
        self.local_data
            .par_iter()
            .enumerate()
            .filter(|(_, d)| !d.is_empty())
            .map(|(i, d)| Ok((OrgId(i as u32), model::evaluate(&self.global, d, THRESHOLD)?)))
            .collect()
    }

    /// Runs rounds until the configured count or accuracy target, then
    /// validates the ledger.
    pub fn run(&mut self) -> Result<RunResult, FederationError> {
        let mut reports = Vec::new();
        while (self.round as usize) < self.cfg.rounds {
            let t = self.round;
            match self.run_round(t) {
                Ok(r) => {
                    let acc = r.global_metrics.accuracy;
                    reports.push(r);
                    if self.cfg.accuracy_target.is_some_and(|target| acc >= target) {
                        break;
                    }
                }
                Err(FederationError::ConsensusAborted { round, .. }) => {
                    return Err(FederationError::ConsensusAborted {
                        round,
                        partial: reports,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        self.chain.validate().map_err(FederationError::ChainInvalid)?;
        Ok(RunResult::new(
            reports,
            self.global_digest,
            self.contributions.clone(),
        ))
    }
}

/// Initializes a federation and runs it to completion.
pub fn run(cfg: &FederationConfig, data: &Dataset) -> Result<RunResult, FederationError> {
    init_round0(cfg, data)?.run()
}
