//! Named random substreams derived from one master seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! place never shifts the values another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Biased sampling in the gang scheduler.
    Scheduling,
    /// Pod queue ordering for pod-at-a-time scheduling.
    PodOrdering,
    /// Stochastic node failures.
    Faults,
    /// Stochastic deploy-step crashes.
    DeployCrashes,
    /// Component recovery delays.
    Recovery,
    /// Synthetic workload generation.
    Workload,
}

impl Substream {
    fn stream_id(self) -> u64 {
        match self {
            Substream::Scheduling => 1,
            Substream::PodOrdering => 2,
            Substream::Faults => 3,
            Substream::Recovery => 4,
            Substream::Workload => 5,
            Substream::DeployCrashes => 6,
        }
    }
}

pub type SimRng = ChaCha8Rng;

/// Deterministic RNG for `stream` under `seed`.
pub fn substream(seed: u64, stream: Substream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.stream_id());
    rng
}
