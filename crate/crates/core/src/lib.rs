//! Two-step priors for Bayesian model selection.
//!
//! The crate provides statistical experiments with exact divergences,
//! model-index and within-model priors, trans-dimensional samplers for shape
//! constrained and low-rank regression, executable checks of the
//! concentration conditions, and the analysis tools used by the `tsb` CLI.

pub mod error;
pub mod analysis;
pub mod cli;
pub mod experiments;
pub mod numeric;
pub mod params;
pub mod plot;
pub mod priors;
pub mod rng;
pub mod samplers;
pub mod theory_checks;

pub use error::{Error, Result};
