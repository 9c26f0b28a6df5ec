//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own stream keyed by
//! `(seed, stream, index)`, so changing how one component uses randomness
//! never shifts another component's draws, and a run resumed at step `n`
//! sees the same draws as an uninterrupted one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PREFERENCE: u64 = 4;
    pub const PRETRAIN: u64 = 5;
    pub const WORLD: u64 = 6;
    pub const USER: u64 = 7;
    pub const PAIRS: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const SIM: u64 = 11;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream, index)`.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}
