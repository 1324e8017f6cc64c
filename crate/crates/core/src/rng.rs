//! Seeded random streams.
//!
//! Every consumer of randomness derives its own generator from a run seed, a
//! stream tag and an index, so that adding a consumer never shifts the draws
//! seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed; changing one changes every
/// result that depends on it.
pub mod tag {
    pub const INIT: u64 = 0x01;
    pub const DENOISER_BATCH: u64 = 0x10;
    pub const DENOISER_NOISE: u64 = 0x11;
    pub const COMP_NOISE: u64 = 0x12;
    pub const CHAIN_START: u64 = 0x20;
    pub const CHAIN_NOISE: u64 = 0x21;
    pub const SWD_PROJ: u64 = 0x30;
    pub const DATA_REFERENCE: u64 = 0x40;
    pub const DATA_GAUSSIAN_SINGLE: u64 = 0x41;
    pub const DATA_GAUSSIAN_MIXTURE: u64 = 0x42;
    pub const DATA_RING: u64 = 0x43;
    pub const DATA_MOONS: u64 = 0x44;
    pub const EVAL: u64 = 0x50;
    pub const NOISE_PATTERN: u64 = 0x60;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `(seed, tag, index)` into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}
