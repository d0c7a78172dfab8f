pub mod baselines;
pub mod bundle;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod microlm;
pub mod rng;
pub mod serialization;

pub use error::{Error, Result};
