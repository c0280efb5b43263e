//! Deterministic derivation of independent child seeds from a master seed.

use sha2::{Digest, Sha256};

/// Hashes the master seed with a path of indices. Children of different
/// paths are unrelated, and adding new paths never changes existing ones.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}
