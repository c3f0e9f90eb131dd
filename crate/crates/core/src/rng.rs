//! Seed derivation. Every consumer of randomness gets its own ChaCha stream
//! derived from the experiment seed, so adding draws in one subsystem never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Named streams.
pub mod streams {
    pub const FLEET: u64 = 1;
    pub const ENV_TRAIN: u64 = 2;
    pub const ENV_EVAL: u64 = 3;
    pub const TRAINER: u64 = 4;
    pub const MODEL: u64 = 5;
    pub const TOPOLOGY: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
