use super::{Digest256, LedgerError};
use std::collections::HashMap;
use std::sync::RwLock;

/// Content-addressed blob store: every payload is keyed by its SHA-256.
#[derive(Debug, Default)]
pub struct ContentStore {
    blobs: RwLock<HashMap<Digest256, Vec<u8>>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `payload` and returns its digest. Idempotent.
    pub fn put(&self, payload: &[u8]) -> Digest256 {
        let d = Digest256::of(payload);
        let mut blobs = self.blobs.write().expect("store poisoned");
        blobs.entry(d).or_insert_with(|| payload.to_vec());
        d
    }

    /// Returns the payload after re-checking its digest.
    pub fn get(&self, digest: &Digest256) -> Result<Vec<u8>, LedgerError> {
        let blobs = self.blobs.read().expect("store poisoned");
        let blob = blobs.get(digest).ok_or(LedgerError::NotFound(*digest))?;
        if Digest256::of(blob) != *digest {
            return Err(LedgerError::Corrupt(*digest));
        }
        Ok(blob.clone())
    }

    pub fn contains(&self, digest: &Digest256) -> bool {
        self.blobs.read().expect("store poisoned").contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blobs.read().expect("store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of stored payload sizes.
    pub fn total_bytes(&self) -> usize {
        self.blobs
            .read()
            .expect("store poisoned")
            .values()
            .map(Vec::len)
            .sum()
    }

    /// Replaces the bytes stored under `digest` without re-addressing them.
    /// Fault injection only.
    #[doc(hidden)]
    pub fn tamper(&self, digest: &Digest256, payload: Vec<u8>) {
        self.blobs
            .write()
            .expect("store poisoned")
            .insert(*digest, payload);
    }
}
