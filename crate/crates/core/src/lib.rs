//! Simulation, averaging and nonlinear filtering for slow-fast jump-diffusion
//! systems with correlated observation noise.

pub mod averaging;
pub mod error;
pub mod filters;
pub mod harness;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod zakai;

pub use error::{Error, Result};
