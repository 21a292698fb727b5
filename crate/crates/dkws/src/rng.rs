//! Deterministic seed derivation. Every run owns one root seed; each consumer
//! (sampler, init, dropout, ...) derives its own stream from a tag so that
//! adding a consumer never shifts another one's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive a named RNG stream from the root seed.
pub fn derive(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(tag.as_bytes()))
}

/// Derive a stream that also depends on a counter (step, epoch, item index).
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(tag.as_bytes()) ^ index.wrapping_mul(0x9e3779b97f4a7c15))
}
