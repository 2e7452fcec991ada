//! Seed handling.
//!
//! Every stochastic stage draws from a ChaCha8 stream whose seed is derived
//! from one root seed and a stage counter with a SplitMix64 finalizer, so
//! stages stay independent and reproducible no matter the call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stage counters used by the pipeline when splitting the root seed.
pub mod stage {
    pub const PHANTOM: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const GENERATOR_INIT: u64 = 3;
    pub const DISCRIMINATOR_INIT: u64 = 4;
    pub const DATA_ORDER: u64 = 5;
    pub const DENOISER_INIT: u64 = 6;
    pub const DIFFUSION_NOISE: u64 = 7;
    pub const SAMPLING: u64 = 8;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stage `stage` of a run rooted at `root`.
pub fn derive_seed(root: u64, stage: u64) -> u64 {
    splitmix64(root ^ splitmix64(stage))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(root: u64, stage: u64) -> Rng {
    rng_from_seed(derive_seed(root, stage))
}

pub fn normal_f32<R: rand::Rng + ?Sized>(rng: &mut R) -> f32 {
    StandardNormal.sample(rng)
}

pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f32], std: f32) {
    for v in out {
        *v = normal_f32(rng) * std;
    }
}
