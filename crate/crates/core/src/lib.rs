//! Bayesian hierarchical measurement-error model for atom-column locations
//! in atomic-resolution images.
//!
//! The crate covers the full workflow: synthetic data generation
//! ([`simulate`]), initial column detection by Gaussian peak fitting
//! ([`detect`]), the hierarchical MCMC sampler with a non-contiguous block
//! likelihood ([`hier`]), the two fixed-location regression baselines
//! ([`baseline`]), and a replicated simulation-study driver ([`harness`]).

pub mod baseline;
pub mod config;
pub mod covariance;
pub mod detect;
pub mod error;
pub mod harness;
pub mod hier;
pub mod imaging;
pub mod kernel;
pub mod lattice;
pub mod mcmc;
pub mod pipeline;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
