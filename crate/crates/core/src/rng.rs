//! Seeding. Every random stream is a `ChaCha8Rng` built with
//! `seed_from_u64`, and sub-streams are derived from the master seed with
//! SplitMix64 so runs are reproducible from one integer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const KMEANS: u64 = 2;
    pub const REINIT: u64 = 3;
    pub const SHUFFLE_BASE: u64 = 0x1000;
    pub const SWEEP_BASE: u64 = 0x10_0000;
}
