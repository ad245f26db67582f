//! Deterministic seed derivation. Every random stream in a run is keyed off
//! the base seeds in the config plus a small tuple of stream coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags, so that e.g. the partition and the init stream never collide.
pub mod stream {
    pub const PARTITION: u64 = 1;
    pub const INIT: u64 = 2;
    pub const LOCAL_TRAIN: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const BLUR: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const DATA_SPLIT: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
    pub const KMEANS: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, coords: &[u64]) -> Rng {
    rng(derive(base, coords))
}
