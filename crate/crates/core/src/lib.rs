pub mod airy;
pub mod diffusion;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod passage;
pub mod quadrature;
pub mod queue_sim;
pub mod rng;
pub mod scaling;
pub mod stats;

pub use error::{Error, Result};
