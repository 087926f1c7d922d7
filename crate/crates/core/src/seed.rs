//! Deterministic seed derivation for independent random streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of stream labels.
pub fn derive(parent: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix64(parent), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream labels.
pub const SYSTEM: u64 = 1;
pub const TRAJECTORY: u64 = 2;
pub const SPS: u64 = 3;
pub const AUX_TRAJECTORY: u64 = 4;
pub const VEC_SPS: u64 = 5;
pub const PROBE: u64 = 6;
