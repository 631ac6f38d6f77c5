//! Seeded random streams.
//!
//! Every random draw in the crate comes from Xoshiro256++ seeded through
//! `seed_from_u64` (SplitMix64 expansion), which gives identical sequences on
//! every platform. Dataset records use `seed ^ index` directly; other streams
//! mix a stream tag into the seed first.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng64;

/// Generator for dataset record `index`.
pub fn record_rng(seed: u64, index: u64) -> Rng64 {
    Rng64::seed_from_u64(seed ^ index)
}

/// Generator for an auxiliary stream identified by `(stream, index)`.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> Rng64 {
    Rng64::seed_from_u64(mix(mix(seed ^ stream.rotate_left(32)) ^ index))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags.
pub mod streams {
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const RANSAC: u64 = 4;
    pub const SCENE: u64 = 5;
}
