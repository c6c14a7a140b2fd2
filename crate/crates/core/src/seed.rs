//! Seed derivation.
//!
//! A single master seed fans out to per-stage seeds by hashing the master
//! seed together with a stage label: `seed = first 8 bytes (LE) of
//! SHA-256(master_le_bytes || label_utf8)`. Stages can therefore be re-run
//! independently while staying reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `master` and a textual label.
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Derives a child seed from `master`, a label and a list of indices.
pub fn derive_indexed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
