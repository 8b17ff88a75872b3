//! Desk-scale experiment harness around the normalization engine.
//!
//! Provides synthetic class-conditional data, a small fixed-architecture
//! network with manual backpropagation, deterministic i.i.d. and
//! class-stratified batch samplers, and the sweep commands behind the
//! `normlab` binary. Every command is a deterministic function of its
//! configuration and seed, including under parallel execution.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod model;
pub mod sampler;
pub mod train;

pub use error::{HarnessError, HarnessResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic RNG used everywhere in the harness.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Splitmix64 step, used to derive independent seeds from a master seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
