//! Portable seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! 64-bit seed and a stream id. ChaCha output is specified bit-for-bit, so a
//! `(seed, stream)` pair yields the same sequence on every platform, and two
//! different stream ids under one seed never overlap.
//!
//! Stream ids are composed as `purpose << 32 | index`, where `index` is a
//! per-purpose sub-counter (for instance the perturbation index `k` of the
//! SAM-sharpness estimator).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    TrainData = 1,
    TestData = 2,
    Init = 3,
    SharpnessPerturbation = 4,
    LandscapeDirection = 5,
    Synthetic = 6,
}

/// Generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}
