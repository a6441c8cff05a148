//! Seeded randomness shared by every stage.
//!
//! All randomized steps draw from ChaCha8 streams derived from a user seed and
//! a small tuple of stream labels, so one stage never perturbs another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// One SplitMix64 step.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent stream from `seed` and a list of labels.
pub fn stream(seed: u64, labels: &[u64]) -> StreamRng {
    let mut state = mix(seed);
    for &label in labels {
        state = mix(state ^ mix(label));
    }
    StreamRng::seed_from_u64(state)
}

/// Stream labels.
pub mod label {
    pub const CLUSTER: u64 = 1;
    pub const KEYGEN: u64 = 2;
    pub const PADDING: u64 = 3;
    pub const PROBES: u64 = 4;
    pub const ENCRYPT: u64 = 5;
    pub const TRAPDOOR: u64 = 6;
    pub const QUERY: u64 = 7;
    pub const CORPUS: u64 = 8;
    pub const DISCRIMINATOR: u64 = 9;
    pub const SHUFFLE: u64 = 10;
}

/// Standard normal sample (Box-Muller, one branch).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // gen::<f64>() is in [0, 1); shift to (0, 1] so ln stays finite
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Uniform sample in the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let x = rng.gen::<f64>();
        if x > 0.0 {
            return x;
        }
    }
}
