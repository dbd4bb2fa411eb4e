//! Seeded random streams.
//!
//! Every episode draws from its own ChaCha stream keyed by the run seed, so
//! results do not depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream used by the learner for minibatch sampling and update noise.
pub const LEARNER_STREAM: u64 = u64::MAX;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id of trial `trial` in sweep cell `cell`. Sweep streams live in the
/// upper half of the id space so they never alias training episodes.
pub fn sweep_stream(cell: usize, trial: usize, trials_per_cell: usize) -> u64 {
    (1u64 << 62) | (cell as u64 * trials_per_cell as u64 + trial as u64)
}

/// Stream id of evaluation episode `index`.
pub fn eval_stream(index: usize) -> u64 {
    (1u64 << 61) | index as u64
}
