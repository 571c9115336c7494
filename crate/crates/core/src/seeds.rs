//! Seed derivation.
//!
//! Every random stream in the crate is seeded from a 64-bit value obtained by
//! mixing a parent seed with a stream tag and an index through the SplitMix64
//! finalizer. Streams are therefore reproducible on any machine and independent
//! of the order in which replicates or decisions are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th member of the stream `tag` under `parent`.
pub fn derive(parent: u64, tag: u64, index: u64) -> u64 {
    let stream = mix64(
        tag.wrapping_mul(GOLDEN_GAMMA) ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
    );
    mix64(parent ^ stream)
}

/// Seed for simulation replicate `index` under `master_seed`.
pub fn replicate_seed(master_seed: u64, index: u64) -> u64 {
    derive(master_seed, tags::REPLICATE, index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) mod tags {
    pub const REPLICATE: u64 = 1;
    pub const TOX_FIT: u64 = 2;
    pub const EFF_FIT: u64 = 3;
    pub const ASSIGN: u64 = 4;
    pub const OUTCOMES: u64 = 5;
    pub const ARRIVALS: u64 = 7;
}
