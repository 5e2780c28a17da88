use super::chain::LocalUpdateTx;
use super::store::ContentStore;
use super::{decode_model, encode_model, Digest256, LedgerError};
use crate::data::Dataset;
use crate::model::{self, ModelParams};
use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type ValidatorId = u32;

/// Validators that re-evaluate local models on their own labelled shards.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatorPanel {
    validators: Vec<ValidatorId>,
    test_shards: BTreeMap<ValidatorId, Dataset>,
    pub accuracy_floor: f64,
}

impl ValidatorPanel {
    pub fn new(
        test_shards: BTreeMap<ValidatorId, Dataset>,
        accuracy_floor: f64,
    ) -> Result<Self, LedgerError> {
        if test_shards.len().is_multiple_of(2) {
            return Err(LedgerError::Panel(format!(
                "{} validators; the panel size must be odd",
                test_shards.len()
            )));
        }
        if !(0.0..=1.0).contains(&accuracy_floor) {
            return Err(LedgerError::Panel(format!(
                "accuracy floor {accuracy_floor} not in [0, 1]"
            )));
        }
        if test_shards.values().any(Dataset::is_empty) {
            return Err(LedgerError::Panel("validator test shard is empty".into()));
        }
        Ok(ValidatorPanel {
            validators: test_shards.keys().copied().collect(),
            test_shards,
            accuracy_floor,
        })
    }

    /// Carves `server_test` into `count` stratified, near-equal shards: each
    /// class is shuffled and dealt round-robin.
    pub fn carve(
        server_test: &Dataset,
        count: usize,
        accuracy_floor: f64,
        seed: u64,
    ) -> Result<Self, LedgerError> {
        if count == 0 || count > server_test.len() {
            return Err(LedgerError::Panel(format!(
                "cannot carve {count} validator shards from {} examples",
                server_test.len()
            )));
        }
        let mut rng = seed::rng(seed);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); count];
        let mut dealt = 0usize;
        for label in [1u8, 0u8] {
            let mut idx: Vec<usize> = server_test
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == label)
                .map(|(i, _)| i)
                .collect();
            idx.shuffle(&mut rng);
            for i in idx {
                buckets[dealt % count].push(i);
                dealt += 1;
            }
        }
        let shards = buckets
            .into_iter()
            .enumerate()
            .map(|(v, mut b)| {
                b.sort_unstable();
                (v as ValidatorId, server_test.subset(&b))
            })
            .collect();
        ValidatorPanel::new(shards, accuracy_floor)
    }

    pub fn validators(&self) -> &[ValidatorId] {
        &self.validators
    }

    pub fn shard(&self, v: ValidatorId) -> Option<&Dataset> {
        self.test_shards.get(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RejectReason {
    NotFound,
    Corrupt,
    Malformed(String),
    NonFinite,
    BelowFloor { accuracy: f64 },
    UnknownValidator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted { accuracy: f64 },
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted { .. })
    }
}

/// Fetches the model behind `tx`, and accepts it iff every weight is finite
/// and its accuracy on the validator's shard reaches the panel floor.
pub fn verify_local_update(
    panel: &ValidatorPanel,
    validator: ValidatorId,
    tx: &LocalUpdateTx,
    store: &ContentStore,
) -> Verdict {
    let Some(shard) = panel.shard(validator) else {
        return Verdict::Rejected(RejectReason::UnknownValidator);
    };
    let bytes = match store.get(&tx.model_digest) {
        Ok(b) => b,
        Err(LedgerError::NotFound(_)) => return Verdict::Rejected(RejectReason::NotFound),
        Err(_) => return Verdict::Rejected(RejectReason::Corrupt),
    };
    let model = match decode_model(&bytes) {
        Ok(m) => m,
        Err(e) => return Verdict::Rejected(RejectReason::Malformed(e.to_string())),
    };
    if !model.is_finite() {
        return Verdict::Rejected(RejectReason::NonFinite);
    }
    match model::evaluate(&model, shard, 0.5) {
        Ok(m) if m.accuracy >= panel.accuracy_floor => Verdict::Accepted { accuracy: m.accuracy },
        Ok(m) => Verdict::Rejected(RejectReason::BelowFloor { accuracy: m.accuracy }),
        Err(e) => Verdict::Rejected(RejectReason::Malformed(e.to_string())),
    }
}

/// Outcome of the validators' vote on aggregated candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct Consensus {
    pub digest: Digest256,
    pub model: ModelParams,
    pub votes: BTreeMap<ValidatorId, Digest256>,
    /// Validators whose candidate lost ("faulty updates").
    pub faulty: Vec<ValidatorId>,
}

/// Picks the candidate digest held by a strict majority of validators and
/// stores its payload. Requires exactly one candidate per panel member.
pub fn majority_global(
    panel: &ValidatorPanel,
    candidates: &BTreeMap<ValidatorId, ModelParams>,
    store: &ContentStore,
) -> Result<Consensus, LedgerError> {
    if candidates.keys().ne(panel.validators().iter()) {
        return Err(LedgerError::Panel(
            "need exactly one candidate per validator".into(),
        ));
    }
    let mut votes = BTreeMap::new();
    let mut payloads: BTreeMap<Digest256, (Vec<u8>, ValidatorId)> = BTreeMap::new();
    let mut tally: BTreeMap<Digest256, usize> = BTreeMap::new();
    for (&v, m) in candidates {
        let bytes = encode_model(m);
        let d = Digest256::of(&bytes);
        votes.insert(v, d);
        *tally.entry(d).or_insert(0) += 1;
        payloads.entry(d).or_insert((bytes, v));
    }
    let n = candidates.len();
    let winner = tally
        .iter()
        .find(|(_, &c)| 2 * c > n)
        .map(|(d, _)| *d)
        .ok_or(LedgerError::NoMajority {
            validators: n,
            distinct: tally.len(),
        })?;
    let (bytes, first) = &payloads[&winner];
    store.put(bytes);
    let faulty = votes
        .iter()
        .filter(|(_, d)| **d != winner)
        .map(|(v, _)| *v)
        .collect();
    Ok(Consensus {
        digest: winner,
        model: candidates[first].clone(),
        votes,
        faulty,
    })
}
