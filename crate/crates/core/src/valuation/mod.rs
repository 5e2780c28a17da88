//! Shapley-value data valuation of submitted local models.
//!
//! A round's submissions define a cooperative game whose utility for a
//! coalition is the loss improvement on the server test set obtained by
//! uniformly averaging the coalition's models. Values are computed exactly
//! by subset enumeration for small rounds or estimated by truncated
//! Monte-Carlo permutation sampling.

mod axioms;
mod game;
mod shapley;

pub use axioms::{check_axioms, AdditivityCheck, AxiomReport, DummyCheck, SymmetryCheck};
pub use game::{CoalitionGame, FnGame, SumGame, TableGame, UtilityGame, MAX_PLAYERS};
pub use shapley::{exact_shapley, tmc_shapley, TmcParams, EXACT_MAX_PLAYERS};

use crate::model::ModelError;
use crate::OrgId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValuationError {
    #[error("organization {0} has no submission in this game")]
    UnknownOrg(OrgId),
    #[error("{players} players exceed the limit of {limit} for {what}; use tmc_shapley")]
    Capacity {
        what: &'static str,
        players: usize,
        limit: usize,
    },
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Tmc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub values: BTreeMap<OrgId, f64>,
    /// Utility queries issued (cache hits included).
    pub num_evaluations: u64,
    pub method: Method,
    /// Standard error of each estimate; empty for exact results.
    pub stderr: BTreeMap<OrgId, f64>,
    /// Permutations sampled (TMC only).
    pub permutations: u64,
}

impl ShapleyResult {
    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }

    pub fn get(&self, org: OrgId) -> f64 {
        self.values.get(&org).copied().unwrap_or(0.0)
    }
}

/// Per-organization sum of Shapley values across rounds.
pub fn accumulate_contributions<'a>(
    history: impl IntoIterator<Item = &'a ShapleyResult>,
) -> BTreeMap<OrgId, f64> {
    let mut totals = BTreeMap::new();
    for round in history {
        for (&org, &v) in &round.values {
            *totals.entry(org).or_insert(0.0) += v;
        }
    }
    totals
}
