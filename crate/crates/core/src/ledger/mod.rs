//! Simulated permissioned ledger.
//!
//! Local models live off-chain in a content-addressed [`ContentStore`]; the
//! chain records only fixed-size transactions carrying their SHA-256
//! digests. A [`ValidatorPanel`] cross-verifies submitted models and votes
//! on independently aggregated candidates; the strict-majority candidate
//! becomes the next global model.

mod chain;
mod panel;
mod store;

pub use chain::{
    append_block, export_chain, import_chain, validate_chain, Block, Chain, ChainFault, FaultKind,
    LocalUpdateTx, GLOBAL_RECORD_ORG, TX_RECORD_SIZE,
};
pub use panel::{
    majority_global, verify_local_update, Consensus, RejectReason, ValidatorId, ValidatorPanel, Verdict,
};
pub use store::ContentStore;

use crate::model::{ModelError, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("no blob stored under {0}")]
    NotFound(Digest256),
    #[error("stored blob under {0} fails its integrity check")]
    Corrupt(Digest256),
    #[error("cannot decode model payload: {0}")]
    Decode(String),
    #[error("block at height {height} rejected: {kind}")]
    Integrity { height: u64, kind: FaultKind },
    #[error("no strict majority among {validators} validator votes ({distinct} distinct candidates)")]
    NoMajority { validators: usize, distinct: usize },
    #[error("invalid validator panel: {0}")]
    Panel(String),
    #[error("chain export line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A 256-bit SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        Digest256(d)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        let v = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = v
            .try_into()
            .map_err(|v: Vec<u8>| format!("digest has {} bytes, expected 32", v.len()))?;
        Ok(Digest256(arr))
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", &self.to_hex()[..16])
    }
}

impl Serialize for Digest256 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Canonical model encoding: `u32` layer count, each layer width as `u32`,
/// then every weight as a little-endian `f64`. Independent validators that
/// aggregate the same updates therefore hash identically.
pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let dims = params.layer_dims();
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 8 * params.len());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for w in params.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams, LedgerError> {
    let err = |m: &str| LedgerError::Decode(m.to_owned());
    let read_u32 = |at: usize| -> Result<u32, LedgerError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| err("truncated header"))
    };
    let layers = read_u32(0)? as usize;
    if layers > 1024 {
        return Err(err("implausible layer count"));
    }
    let mut dims = Vec::with_capacity(layers);
    for l in 0..layers {
        dims.push(read_u32(4 + 4 * l)? as usize);
    }
    let body = &bytes[4 + 4 * layers..];
    if !body.len().is_multiple_of(8) {
        return Err(err("weight section is not a whole number of f64s"));
    }
    let weights = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::new(dims, weights, 0).map_err(|e| LedgerError::Decode(e.to_string()))
}
