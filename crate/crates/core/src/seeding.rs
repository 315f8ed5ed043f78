//! Deterministic seed derivation.
//!
//! One global seed drives a full run. Every module draws its randomness from
//! a sub-seed derived here, so adding RNG consumption in one module never
//! shifts the streams of another. The rule is fixed: SHA-256 over the
//! little-endian global seed followed by a module tag, truncated to the first
//! eight bytes (little-endian u64).

use sha2::{Digest, Sha256};

/// Derive the sub-seed for `tag` from the run-wide `seed`.
pub fn subseed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
