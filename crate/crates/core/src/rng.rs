//! Deterministic RNG substreams.
//!
//! Every random quantity in a run is drawn from its own ChaCha stream derived
//! from the run seed, so adding a consumer never perturbs another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream domains. The domain occupies the high 32 bits of the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    Walk = 1,
    Noise = 2,
    Init = 3,
    ClientSampling = 4,
    Task = 5,
    Graph = 6,
}

/// Returns the stream for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: Domain, index: u32) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 32) | index as u64);
    rng
}
