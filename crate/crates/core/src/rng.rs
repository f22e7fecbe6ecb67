//! Seed derivation. Every random stream in the crate is a pure function of
//! one 64-bit seed and a path of stream labels, so results do not depend on
//! scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) mod stream {
    pub const FIT: u64 = 0x01;
    pub const REFIT: u64 = 0x02;
    pub const SELECT: u64 = 0x03;
    pub const DATABASE: u64 = 0x04;
    pub const REPLICATE: u64 = 0x05;
    pub const BOOTSTRAP: u64 = 0x06;
    pub const SIMULATE: u64 = 0x07;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `seed` and a path of labels/indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, path: &[u64]) -> Rng {
    rng_from(derive_seed(seed, path))
}
