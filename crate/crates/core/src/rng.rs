//! Seeded random streams.
//!
//! Every consumer of randomness (initialization, shuffling, noise, data
//! generation) draws from its own ChaCha stream so that changing one part
//! of a run never shifts the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids. Epoch shuffles use `SHUFFLE_BASE + epoch`.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BLOBS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const GRADCHECK: u64 = 5;
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
