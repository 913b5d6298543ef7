//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! keyed by the run seed plus a tag path, so streams are independent and
//! stable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives a child seed from a base seed, a textual tag and numeric context.
pub fn derive_seed(base: u64, tag: &str, context: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for c in context {
        h.update(c.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stream(base: u64, tag: &str, context: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, tag, context))
}
