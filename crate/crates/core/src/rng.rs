//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator seeded from a `u64`. Normal variates use
//! the Ziggurat sampler of `rand_distr::StandardNormal`. Sub-seeds for
//! independent streams (per environment, per pool entry, per evaluation set)
//! are derived with SplitMix64 so that two streams never share a seed by
//! accident.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Mixes `seed` and `stream` into a fresh 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Domain tags used with [`derive_seed`] so unrelated consumers of one root
/// seed draw from disjoint streams.
pub mod stream {
    pub const POOL: u64 = 1;
    pub const ENV: u64 = 2;
    pub const INIT_POLICY: u64 = 3;
    pub const INIT_VALUE: u64 = 4;
    pub const MINIBATCH: u64 = 5;
    pub const EVAL_BASES: u64 = 6;
    pub const EVAL_ACTIONS: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const CALIBRATION: u64 = 9;
    pub const CENTROID: u64 = 10;
    pub const FIT: u64 = 11;
}
