//! Random streams. Every draw comes from a ChaCha8 generator keyed by the
//! run seed and positioned on its own stream
//!
//! ```text
//! stream = trial << 32 | kind << 24 | participant
//! ```
//!
//! so a trial's vehicle trajectories never depend on which schemes run, and
//! results do not depend on how trials are spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dpkalman::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Initial state, process and measurement noise of one vehicle.
    Trajectory,
    /// Privacy noise of one scheme (participant 0 carries the output noise).
    Privacy(Scheme),
}

impl StreamKind {
    pub fn code(self) -> u64 {
        match self {
            StreamKind::Trajectory => 0,
            StreamKind::Privacy(s) => match s {
                Scheme::NaiveInput => 1,
                Scheme::CompensatedInput => 2,
                Scheme::OutputKalman => 3,
                Scheme::OutputSynthesized => 4,
            },
        }
    }
}

pub fn stream_id(trial: u32, kind: StreamKind, participant: u32) -> u64 {
    debug_assert!(participant < 1 << 24);
    (trial as u64) << 32 | kind.code() << 24 | participant as u64
}

pub(crate) fn stream(seed: u64, trial: u32, kind: StreamKind, participant: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(trial, kind, participant));
    rng
}
