use super::panel::ValidatorId;
use super::{Digest256, LedgerError};
use crate::OrgId;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

/// Encoded size of one on-chain record: round (8) + org (8) + digest (32) +
/// payload size (8).
pub const TX_RECORD_SIZE: usize = 56;

/// Org field of the per-block record that carries the global model digest.
pub const GLOBAL_RECORD_ORG: u64 = u64::MAX;

/// On-chain record of one organization's local update. The model itself is
/// off-chain under `model_digest`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalUpdateTx {
    pub round: u64,
    pub org_id: OrgId,
    pub model_digest: Digest256,
    pub payload_bytes: u64,
}

fn encode_record(round: u64, org: u64, digest: &Digest256, payload_bytes: u64) -> [u8; TX_RECORD_SIZE] {
    let mut out = [0u8; TX_RECORD_SIZE];
    out[..8].copy_from_slice(&round.to_le_bytes());
    out[8..16].copy_from_slice(&org.to_le_bytes());
    out[16..48].copy_from_slice(digest.as_bytes());
    out[48..].copy_from_slice(&payload_bytes.to_le_bytes());
    out
}

impl LocalUpdateTx {
    pub fn encode(&self) -> [u8; TX_RECORD_SIZE] {
        encode_record(
            self.round,
            u64::from(self.org_id.0),
            &self.model_digest,
            self.payload_bytes,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest256,
    pub txs: Vec<LocalUpdateTx>,
    pub global_model_digest: Digest256,
    /// Candidate digest each validator voted for.
    pub votes: BTreeMap<ValidatorId, Digest256>,
    /// Shapley value of each valued organization in this round.
    pub contributions: BTreeMap<OrgId, f64>,
    pub block_hash: Digest256,
}

impl Block {
    /// Builds a block and seals it with its hash.
    pub fn new(
        height: u64,
        prev_hash: Digest256,
        txs: Vec<LocalUpdateTx>,
        global_model_digest: Digest256,
        votes: BTreeMap<ValidatorId, Digest256>,
        contributions: BTreeMap<OrgId, f64>,
    ) -> Self {
        let mut b = Block {
            height,
            prev_hash,
            txs,
            global_model_digest,
            votes,
            contributions,
            block_hash: Digest256::ZERO,
        };
        b.block_hash = b.compute_hash();
        b
    }

    /// Canonical little-endian encoding of every field except `block_hash`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            80 + self.txs.len() * TX_RECORD_SIZE + self.votes.len() * 40 + self.contributions.len() * 16,
        );
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(&(self.txs.len() as u64).to_le_bytes());
        for tx in &self.txs {
            out.extend_from_slice(&tx.encode());
        }
        out.extend_from_slice(self.global_model_digest.as_bytes());
        out.extend_from_slice(&(self.votes.len() as u64).to_le_bytes());
        for (v, d) in &self.votes {
            out.extend_from_slice(&u64::from(*v).to_le_bytes());
            out.extend_from_slice(d.as_bytes());
        }
        out.extend_from_slice(&(self.contributions.len() as u64).to_le_bytes());
        for (o, c) in &self.contributions {
            out.extend_from_slice(&u64::from(o.0).to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn compute_hash(&self) -> Digest256 {
        let mut d = [0u8; 32];
        d.copy_from_slice(&Sha256::digest(self.canonical_bytes()));
        Digest256(d)
    }

    /// On-chain bytes attributable to this block's records: one fixed-size
    /// record per transaction plus one for the global model digest.
    pub fn record_bytes(&self) -> usize {
        (self.txs.len() + 1) * TX_RECORD_SIZE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    Height { expected: u64, found: u64 },
    PrevHash,
    BlockHash,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::Height { expected, found } => {
                write!(f, "height {found} where {expected} was expected")
            }
            FaultKind::PrevHash => f.write_str("prev_hash does not link to the previous block"),
            FaultKind::BlockHash => f.write_str("block_hash does not match the block contents"),
        }
    }
}

/// First integrity failure found in a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainFault {
    pub height: u64,
    pub kind: FaultKind,
}

impl fmt::Display for ChainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain invalid at height {}: {}", self.height, self.kind)
    }
}

impl std::error::Error for ChainFault {}

fn check_block(expected_height: u64, expected_prev: &Digest256, block: &Block) -> Result<(), ChainFault> {
    let fault = |kind| ChainFault {
        height: expected_height,
        kind,
    };
    if block.height != expected_height {
        return Err(fault(FaultKind::Height {
            expected: expected_height,
            found: block.height,
        }));
    }
    if block.prev_hash != *expected_prev {
        return Err(fault(FaultKind::PrevHash));
    }
    if block.compute_hash() != block.block_hash {
        return Err(fault(FaultKind::BlockHash));
    }
    Ok(())
}

/// Checks consecutive heights, prev-hash links and every block hash. The
/// reported height is the position in the chain where the first failure
/// occurs.
pub fn validate_chain(blocks: &[Block]) -> Result<(), ChainFault> {
    let mut prev = Digest256::ZERO;
    for (h, b) in blocks.iter().enumerate() {
        check_block(h as u64, &prev, b)?;
        prev = b.block_hash;
    }
    Ok(())
}

/// Appends `block` after checking its height, link and hash.
pub fn append_block(chain: &mut Vec<Block>, block: Block) -> Result<(), LedgerError> {
    let prev = chain.last().map_or(Digest256::ZERO, |b| b.block_hash);
    check_block(chain.len() as u64, &prev, &block).map_err(|f| LedgerError::Integrity {
        height: f.height,
        kind: f.kind,
    })?;
    chain.push(block);
    Ok(())
}

/// An append-only sequence of blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn tip_hash(&self) -> Digest256 {
        self.tip().map_or(Digest256::ZERO, |b| b.block_hash)
    }

    /// Seals and appends the next block.
    pub fn push(
        &mut self,
        txs: Vec<LocalUpdateTx>,
        global_model_digest: Digest256,
        votes: BTreeMap<ValidatorId, Digest256>,
        contributions: BTreeMap<OrgId, f64>,
    ) -> Result<&Block, LedgerError> {
        let block = Block::new(
            self.blocks.len() as u64,
            self.tip_hash(),
            txs,
            global_model_digest,
            votes,
            contributions,
        );
        append_block(&mut self.blocks, block)?;
        Ok(self.blocks.last().expect("just appended"))
    }

    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        append_block(&mut self.blocks, block)
    }

    pub fn validate(&self) -> Result<(), ChainFault> {
        validate_chain(&self.blocks)
    }
}

/// Writes one JSON object per block per line.
pub fn export_chain(blocks: &[Block], mut out: impl Write) -> std::io::Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut out, b)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses an export written by [`export_chain`]. Blank lines are skipped.
pub fn import_chain(input: impl BufRead) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LedgerError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let b: Block = serde_json::from_str(&line).map_err(|e| LedgerError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        blocks.push(b);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(round: u64, org: u32) -> LocalUpdateTx {
        LocalUpdateTx {
            round,
            org_id: OrgId(org),
            model_digest: Digest256::of(&[round as u8, org as u8]),
            payload_bytes: 100,
        }
    }

    fn chain(n: u64) -> Chain {
        let mut c = Chain::new();
        for h in 0..n {
            let votes = BTreeMap::from([(0, Digest256::of(&[h as u8]))]);
            let contrib = BTreeMap::from([(OrgId(1), 0.25 * h as f64)]);
            c.push(
                vec![tx(h, 1), tx(h, 2)],
                Digest256::of(&[h as u8]),
                votes,
                contrib,
            )
            .unwrap();
        }
        c
    }

    #[test]
    fn genesis_append() {
        let c = chain(1);
        assert_eq!(c.len(), 1);
        assert_eq!(c.blocks()[0].prev_hash, Digest256::ZERO);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn wrong_height_or_link_rejected() {
        let mut c = chain(2);
        let bad = Block::new(
            5,
            c.tip_hash(),
            vec![],
            Digest256::ZERO,
            BTreeMap::new(),
            BTreeMap::new(),
        );
        assert!(matches!(
            c.append(bad),
            Err(LedgerError::Integrity { height: 2, .. })
        ));
        let bad = Block::new(
            2,
            Digest256::ZERO,
            vec![],
            Digest256::ZERO,
            BTreeMap::new(),
            BTreeMap::new(),
        );
        assert!(matches!(
            c.append(bad),
            Err(LedgerError::Integrity {
                height: 2,
                kind: FaultKind::PrevHash
            })
        ));
    }

    #[test]
    fn tampered_tx_is_located() {
        let c = chain(3);
        let mut blocks = c.blocks().to_vec();
        blocks[1].txs[0].payload_bytes += 1;
        let f = validate_chain(&blocks).unwrap_err();
        assert_eq!(f.height, 1);
        assert_eq!(f.kind, FaultKind::BlockHash);
    }

    #[test]
    fn rehash_reproduces_and_records_are_fixed_size() {
        let c = chain(4);
        for b in c.blocks() {
            assert_eq!(b.compute_hash(), b.block_hash);
            assert_eq!(b.record_bytes(), 3 * TX_RECORD_SIZE);
        }
        assert_eq!(tx(0, 1).encode().len(), 56);
    }

    #[test]
    fn export_import_round_trip() {
        let c = chain(5);
        let mut buf = Vec::new();
        export_chain(c.blocks(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        let back = import_chain(buf.as_slice()).unwrap();
        assert_eq!(back, c.blocks());
        assert!(validate_chain(&back).is_ok());
        assert!(import_chain(&b""[..]).unwrap().is_empty());
        assert!(matches!(
            import_chain(&b"{not json\n"[..]),
            Err(LedgerError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_chain_is_valid() {
        assert!(validate_chain(&[]).is_ok());
    }
}
