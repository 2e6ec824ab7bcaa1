//! Named random sub-streams derived from one user seed.
//!
//! Each consumer asks for its own stream by name, so adding draws in one
//! feature never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic generator for `(seed, name)`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed, for APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    substream(seed, name).next_u64()
}
