pub mod ar;
pub mod baselines;
pub mod csvio;
pub mod error;
pub mod evaluation;
pub mod identify;
pub mod kernel;
pub mod linalg;
pub mod paradigm;
pub mod rng;
pub mod sampler;
pub mod simulation;

pub use error::{Error, Result};
