//! Seed derivation. Every stream of randomness in a run is derived from the
//! master seed plus a purpose tag and an index, so episodes and stages can be
//! replayed independently and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(tag)) ^ index)
}

pub fn rng(master: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, tag, index))
}

pub mod tags {
    pub const EPISODE: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const SFT_SHUFFLE: u64 = 3;
    pub const RFT_SHUFFLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const GENERATE: u64 = 7;
    pub const INIT: u64 = 8;
}
