//! Agent-based herding market simulator.
//!
//! A finite market of `n` agents is simulated as an interacting pair of Markov
//! chains (price and market character) in continuous time. Large-market limits
//! are integrated numerically and compared against the finite model.

pub mod analytics;
pub mod cli;
pub mod coefficients;
pub mod engine;
pub mod error;
pub mod integrators;
pub mod lux;

pub use error::{Error, Result};

/// Random number generator used for every stochastic component.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Generator for `seed`.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

/// Seed of an independent stream `stream` derived from `seed` (SplitMix64 mixing).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
