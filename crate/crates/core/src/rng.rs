//! Named, independent random streams derived from one root seed.
//!
//! Each stream is a ChaCha8 generator keyed by the root seed with its own
//! stream counter, so drawing more numbers from one subsystem never shifts
//! another subsystem's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Sim = 1,
    Spawn = 2,
    Exploration = 3,
    Init = 4,
    Replay = 5,
    Eval = 6,
}

pub fn stream_rng(root_seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream for sub-run `index` (e.g. one evaluation episode) of a named stream.
pub fn sub_stream_rng(root_seed: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(((index + 1) << 8) | stream as u64);
    rng
}
