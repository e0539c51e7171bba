//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic routine takes a base seed and derives sub-streams from it,
//! so results do not depend on thread count or execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of stream indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags keep derived seeds for different purposes apart.
pub mod tag {
    pub const IMPUTATION: u64 = 1;
    pub const BOOTSTRAP_RESAMPLE: u64 = 2;
    pub const BOOTSTRAP_ANALYSIS: u64 = 3;
    pub const SCENARIO_DATA: u64 = 4;
    pub const SCENARIO_ANALYSIS: u64 = 5;
    pub const SCENARIO_BOOTSTRAP: u64 = 6;
}
