//! Seeded random streams.
//!
//! Every consumer of randomness takes its own ChaCha stream derived from one
//! integer seed, so adding draws to one consumer never shifts another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Split = 4,
    Synthetic = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
