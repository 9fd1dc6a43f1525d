//! Likelihood-path OOD detection: Gaussian VAE statistics, classical
//! second-stage detectors and geometric diagnostics.

mod binio;
pub mod cli;
pub mod datasets;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod vae;

pub use error::{LpathError, Result};
pub use matrix::DataMatrix;
