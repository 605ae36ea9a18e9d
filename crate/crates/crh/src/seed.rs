//! Seed fan-out.
//!
//! All randomness flows from one `u64` seed, split into independent ChaCha
//! streams, one per consumer. Toggling a feature that consumes randomness
//! (e.g. the greedy class order) therefore never perturbs the draws seen by
//! the other consumers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per randomness consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Codebook sampling (Bernoulli or unique-uniform).
    Codebook = 0,
    /// Initial choice of class centers from the codebook.
    InitAssignment = 1,
    /// Hash-model parameter initialization.
    ModelInit = 2,
    /// Per-epoch batch shuffling.
    BatchOrder = 3,
    /// Class orders for the greedy assignment solver.
    GreedyOrder = 4,
    /// Synthetic data generation.
    Synth = 5,
}

/// Derives one independent RNG per consumer from a single seed.
#[derive(Debug, Clone)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh RNG positioned at the start of `stream`.
    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }
}
