//! Bayesian identification of linear structural dynamics models whose
//! prediction errors follow a Gaussian process over time.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod prediction;
pub mod rng;
pub mod sampler;
pub mod selection;

pub use error::{Error, Result};
