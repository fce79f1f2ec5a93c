//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. The generator is
//! ChaCha12 (`rand_chacha`), a counter-based stream cipher whose output is
//! fully specified and therefore identical across platforms. Independent
//! streams for the same seed are obtained through ChaCha's 64-bit stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SbbRng = ChaCha12Rng;

/// Generator for `seed` on stream 0.
pub fn seeded(seed: u64) -> SbbRng {
    SbbRng::seed_from_u64(seed)
}

/// Generator for `seed` on an independent stream `stream`.
pub fn stream(seed: u64, stream: u64) -> SbbRng {
    let mut rng = SbbRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used by the trainer and the sampler. Keeping them fixed means
/// two code paths that consume the same stream see the same numbers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const THETA: u64 = 2;
    pub const TRANSPORT: u64 = 3;
    pub const INFERENCE: u64 = 4;
    pub const DATA_SOURCE: u64 = 5;
    pub const DATA_TARGET: u64 = 6;
    pub const DATA_EVAL_SOURCE: u64 = 7;
    pub const DATA_EVAL_TARGET: u64 = 8;
    pub const METRIC: u64 = 9;
    pub const SDE: u64 = 10;
    pub const SPLIT: u64 = 11;
}
