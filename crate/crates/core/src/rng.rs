//! Deterministic seed derivation.
//!
//! Training uses a seed hierarchy (run seed -> step seed -> group seed) so
//! that any single group can be resampled in isolation without replaying the
//! whole run. Derivation is a splitmix64-style bit mix: cheap, stateless,
//! and stable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from a parent seed and a position tag.
///
/// The same `(base, tag)` pair always yields the same child, and nearby tags
/// give unrelated outputs (the constants are the usual splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-level derivation, `derive_seed(derive_seed(base, a), b)`.
pub fn derive_seed2(base: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(base, a), b)
}

/// Build the stream RNG for a derived seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
