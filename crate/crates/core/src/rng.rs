//! Counter-based random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a run seed
//! and a fixed stream tag, so adding or reordering consumers never shifts the
//! draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const SCORE_INIT: u64 = 2;
    pub const WEIGHT_INIT: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const SAMPLER: u64 = 5;
    pub const REFERENCE: u64 = 6;
    pub const PILOT: u64 = 7;
    pub const TARGET_MC: u64 = 8;
    pub const SHUFFLE: u64 = 9;
    /// Sampler trajectories use `TRAJECTORY_BASE + index`.
    pub const TRAJECTORY_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, tag: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
