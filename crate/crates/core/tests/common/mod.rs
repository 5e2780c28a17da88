//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use fedledger::data::Dataset;
use fedledger::ledger::{Block, Chain, Digest256, LocalUpdateTx};
use fedledger::model;
use fedledger::{ModelParams, OrgId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Central-difference step of the gradient check.
pub const FD_STEP: f64 = 1e-5;
/// Components smaller than this are compared absolutely rather than
/// relatively.
pub const FD_FLOOR: f64 = 1e-7;

/// Largest relative error between the analytic gradient of the penalized
/// loss and its central finite difference.
pub fn gradient_check(params: &ModelParams, batch: &Dataset, weight_decay: f64) -> f64 {
    let analytic = model::gradient(params, batch, weight_decay).unwrap();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let w = params.weights()[i];
        probe.weights_mut()[i] = w + FD_STEP;
        let up = model::penalized_loss(&probe, batch, weight_decay).unwrap();
        probe.weights_mut()[i] = w - FD_STEP;
        let down = model::penalized_loss(&probe, batch, weight_decay).unwrap();
        probe.weights_mut()[i] = w;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Random labelled rows with entries in [-2, 2].
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Dataset {
    let rows = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
    Dataset::from_rows(rows, labels).unwrap()
}

fn digest(tag: u64) -> Digest256 {
    Digest256::of(&tag.to_le_bytes())
}

/// A 10-block chain whose blocks all carry transactions, votes and
/// contributions.
pub fn ten_block_chain() -> Chain {
    let mut chain = Chain::new();
    for h in 0..10u64 {
        let txs = (0..3u32)
            .map(|o| LocalUpdateTx {
                round: h,
                org_id: OrgId(o),
                model_digest: digest(100 * h + u64::from(o)),
                payload_bytes: 1000 + u64::from(o),
            })
            .collect();
        let votes = (0..3u32).map(|v| (v, digest(h))).collect();
        let contributions: BTreeMap<OrgId, f64> = (0..3u32)
            .map(|o| (OrgId(o), 0.01 * f64::from(o + 1) * (h as f64 + 1.0)))
            .collect();
        chain.push(txs, digest(h), votes, contributions).unwrap();
    }
    chain
}

/// Every single-byte-addressable field of a block, as `(name, byte width)`.
pub const FIELDS: [(&str, usize); 10] = [
    ("height", 8),
    ("prev_hash", 32),
    ("tx.round", 8),
    ("tx.org_id", 4),
    ("tx.model_digest", 32),
    ("tx.payload_bytes", 8),
    ("global_model_digest", 32),
    ("vote", 32),
    ("contribution", 8),
    ("block_hash", 32),
];

fn flip_u64(v: &mut u64, byte: usize, mask: u8) {
    *v ^= u64::from(mask) << (8 * byte);
}

/// XORs `mask` (non-zero) into byte `byte` of field `field` of `block`;
/// `item` picks the transaction, vote or contribution.
pub fn tamper(block: &mut Block, field: usize, item: usize, byte: usize, mask: u8) {
    assert_ne!(mask, 0);
    let (_, width) = FIELDS[field];
    let byte = byte % width;
    match FIELDS[field].0 {
        "height" => flip_u64(&mut block.height, byte, mask),
        "prev_hash" => block.prev_hash.0[byte] ^= mask,
        "tx.round" => {
            let i = item % block.txs.len();
            flip_u64(&mut block.txs[i].round, byte, mask)
        }
        "tx.org_id" => {
            let i = item % block.txs.len();
            block.txs[i].org_id.0 ^= u32::from(mask) << (8 * byte)
        }
        "tx.model_digest" => {
            let i = item % block.txs.len();
            block.txs[i].model_digest.0[byte] ^= mask
        }
        "tx.payload_bytes" => {
            let i = item % block.txs.len();
            flip_u64(&mut block.txs[i].payload_bytes, byte, mask)
        }
        "global_model_digest" => block.global_model_digest.0[byte] ^= mask,
        "vote" => {
            let key = *block.votes.keys().nth(item % block.votes.len()).unwrap();
            block.votes.get_mut(&key).unwrap().0[byte] ^= mask
        }
        "contribution" => {
            let key = *block
                .contributions
                .keys()
                .nth(item % block.contributions.len())
                .unwrap();
            let c = block.contributions.get_mut(&key).unwrap();
            let mut bits = c.to_bits();
            flip_u64(&mut bits, byte, mask);
            *c = f64::from_bits(bits)
        }
        "block_hash" => block.block_hash.0[byte] ^= mask,
        other => unreachable!("{other}"),
    }
}
