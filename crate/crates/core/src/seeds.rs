//! Seed derivation.
//!
//! Every random stream in a run is seeded from a single master seed. A child
//! seed is obtained by folding a sequence of integer tags into the parent with
//! the SplitMix64 finalizer:
//!
//! ```text
//! h = mix(seed ^ 0x9E3779B97F4A7C15)
//! for tag in tags: h = mix(h ^ mix(tag + 0x9E3779B97F4A7C15))
//! ```
//!
//! where `mix` is the SplitMix64 output function. The derivation is pure, so
//! work can be scheduled in any order or in parallel without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags used across the crate. The numeric values are part of the
/// reproducibility contract and must not change.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const LEARNING_RATE: u64 = 4;
    pub const CLIENT: u64 = 5;
    pub const ATTACK: u64 = 6;
    pub const FOREST: u64 = 7;
    pub const IMPORTANCE: u64 = 8;
    pub const SYNTHETIC: u64 = 9;
    pub const EXPERIMENT: u64 = 10;
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(seed ^ GOLDEN), |h, &t| {
        mix(h ^ mix(t.wrapping_add(GOLDEN)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
