//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! from a `u64` via `seed_from_u64` (which expands the seed with PCG32), with
//! independent substreams selected through ChaCha's 64-bit stream id. A
//! dataset sequence `l` always draws from stream `l + 1` of the dataset seed,
//! and stream 0 is reserved for shared draws (component coefficients,
//! frequencies), so growing `N` never reshuffles earlier sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream for shared (non per-item) draws.
pub fn shared(seed: u64) -> Stream {
    stream(seed, 0)
}

/// Stream for item `index` (sequence, trial, restart, ...).
pub fn item(seed: u64, index: usize) -> Stream {
    stream(seed, index as u64 + 1)
}

/// Standard normal via `rand_distr`.
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

/// Independent child seed for a named purpose (`tag`) of `seed`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    stream(seed, tag).next_u64()
}
