//! Seeded random streams.
//!
//! A run is identified by one `u64` seed. Each consumer (instance generation,
//! context arrivals, learner sampling, per-simulation payment draws) reads
//! from its own ChaCha stream under that seed, so two learners driven by the
//! same seed see identical arrivals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Instance = 0,
    Arrivals = 1,
    Learner = 2,
    Payments = 3,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Seed of the `index`-th run of a batch.
pub fn run_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
