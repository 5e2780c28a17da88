//! Deterministic simulator for federated learning across organizations with
//! an audit ledger.
//!
//! Organizations hold imbalanced binary-classification shards (optionally
//! rebalanced with SMOTE), train a shared classifier locally, and submit their
//! updates through a simulated permissioned ledger: payloads go to a
//! content-addressed store, only 256-bit digests go on-chain, and a validator
//! panel cross-verifies the local models and votes on the aggregate. Each
//! round the submitted models are valued with Shapley values over a
//! loss-improvement utility, and the accumulated contributions drive client
//! selection.
//!
//! Everything random is derived from a single master seed, so two runs with
//! the same configuration produce identical results regardless of how many
//! worker threads are used.

pub mod data;
pub mod experiment;
pub mod federation;
pub mod ledger;
pub mod model;
pub mod seed;
pub mod selection;
pub mod valuation;

pub use data::{Dataset, Example};
pub use model::{Metrics, ModelParams, TrainConfig};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of a participating organization (a federated client).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrgId(pub u32);

impl fmt::Display for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for OrgId {
    fn from(v: u32) -> Self {
        OrgId(v)
    }
}

impl OrgId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}
