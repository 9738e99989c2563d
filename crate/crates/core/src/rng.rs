//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! that, for example, changing the schedule never perturbs the data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    LatentMap = 1,
    TrainSamples = 2,
    TestSamples = 3,
    ModelInit = 4,
    Environment = 5,
    Agent = 6,
    DaeInit = 7,
    DaeShuffle = 8,
    Probe = 9,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream keyed additionally by an index (e.g. a round number).
pub fn indexed_stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(purpose as u64);
    rng
}
