//! Rotation-equivariant sparse autoencoders on a synthetic shape dataset.

pub mod base_models;
pub mod dataset;
pub mod equivariance;
pub mod error;
pub mod probing;
pub mod runner;
pub mod sae;
pub mod util;

pub use error::{Error, Result};
