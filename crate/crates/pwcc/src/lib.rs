//! Pixel-wise color constancy for two-illuminant scenes: synthetic data
//! generation with exact ground truth, a compact learned illumination
//! estimator, classical baselines, bilateral post-filtering, and angular
//! error evaluation.

pub mod baselines;
pub mod bilateral;
pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod imagecore;
pub mod losses;
pub mod synth;

pub use error::{Error, Result};
pub use imagecore::DEFAULT_EPSILON;
