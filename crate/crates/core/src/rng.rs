//! Keyed random streams.
//!
//! Every consumer of randomness in the simulator gets its own ChaCha stream
//! keyed by `(master seed, purpose, worker, round)`, so results do not depend
//! on the order in which workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::hashing::{mix64, splitmix_word};

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Batch = 1,
    Padding = 2,
    Validation = 3,
    DeviceSampling = 4,
    SketchSeed = 5,
    Data = 6,
    Init = 7,
    Diagnostics = 8,
}

/// 64-bit key for `(master, purpose, worker, round)`.
pub fn stream_key(master: u64, purpose: Purpose, worker: u64, round: u64) -> u64 {
    let mut h = splitmix_word(master, purpose as u64);
    h = mix64(h ^ splitmix_word(worker, 1));
    mix64(h ^ splitmix_word(round, 2))
}

pub fn stream(master: u64, purpose: Purpose, worker: u64, round: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_key(master, purpose, worker, round))
}

/// Master seed of the sketch hashes used in `round`. Shared by all workers.
pub fn round_sketch_seed(master: u64, round: u64) -> u64 {
    stream_key(master, Purpose::SketchSeed, 0, round)
}
