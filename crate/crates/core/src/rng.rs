//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based stream
//! cipher generator. A run seed is expanded by `seed_from_u64` and each
//! consumer (data, masks, noise, initialisation, evaluation) reads its own
//! numbered stream, so adding draws to one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NcRng = ChaCha8Rng;

/// Stream identifiers for the independent consumers of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Batch = 3,
    Masks = 4,
    Noise = 5,
    Eval = 6,
}

pub fn stream(seed: u64, which: Stream) -> NcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Stream for a numbered sub-task (grid point, mask row, ...) of `which`.
/// `index` must stay below 2^48 - 1.
pub fn substream(seed: u64, which: Stream, index: u64) -> NcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 48) | (index + 1));
    rng
}
