//! Named RNG streams.
//!
//! Every stochastic unit (a persona's events, one source projection, a split
//! shuffle) draws from its own ChaCha stream keyed by the run seed and a path
//! of names, so regenerating one unit never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, path: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_key(seed, path))
}

pub fn stream_key(seed: u64, path: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"memqa-rng-v1");
    h.update(seed.to_le_bytes());
    for part in path {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    key
}

/// Stable 64-bit digest of a path, for seeding derived computations.
pub fn derive_seed(seed: u64, path: &[&str]) -> u64 {
    let key = stream_key(seed, path);
    u64::from_le_bytes(key[..8].try_into().unwrap())
}
