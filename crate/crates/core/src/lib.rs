//! Glow-style flow TTS acoustic model with stochastic duration and pitch
//! predictors, the feature pipeline feeding it, and the evaluation tools used
//! to compare pitch distributions and diversity across model variants.

pub mod align;
pub mod error;
pub mod features;
pub mod config;
pub mod eval;
pub mod flows;
pub mod model;
pub mod splineflows;
pub mod synthcorpus;
pub mod train;
pub mod ndmath;

pub use error::{Error, Result};

/// Seeded generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
