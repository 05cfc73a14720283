//! Deterministic seed derivation. Every component draws its randomness from
//! a stream derived from the single root seed and a textual tag, so runs are
//! reproducible regardless of which subsystems happen to consume entropy.

use sha2::{Digest, Sha256};

/// Derive a child seed from `root` and a component tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derive a child seed indexed by an integer (worker id, epoch, ...).
pub fn derive_seed_indexed(root: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
