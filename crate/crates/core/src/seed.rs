//! Seed derivation.
//!
//! Every stream of randomness in a run is keyed by the master seed plus a
//! path of integers (round, organization, purpose tag). Streams are therefore
//! independent of the order in which parallel workers execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SMOTE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SELECT: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const SHAPLEY: u64 = 7;
    pub const VALIDATORS: u64 = 8;
    pub const RETRY: u64 = 9;
    pub const GENERATE: u64 = 10;
}

/// Derives a 64-bit seed from `master` and a path of integers via SHA-256.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// The RNG used everywhere in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
