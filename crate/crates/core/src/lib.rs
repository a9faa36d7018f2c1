//! Thresholded least squares for high-dimensional recovery from heavy-tailed
//! measurements.
//!
//! The estimator clips the design (entrywise or by row norm) and the response at
//! a level `tau`, then minimizes
//!
//! ```text
//! (1/N) Σ (<x̃ᵢ, θ> − ỹᵢ)² + λ Ψ(θ)
//! ```
//!
//! with Ψ the ℓ1 norm (sparse vectors) or the nuclear norm (low-rank matrices).
//! Besides the solver the crate ships heavy-tailed data synthesizers, moment and
//! small-ball diagnostics, a Gaussian mean width estimator and a seeded
//! experiment harness that writes CSV reports.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod sampling;
pub mod solver;
pub mod truncation;

pub use error::{Error, Result};
pub use model::{
    objective, EstimatorConfig, GroundTruth, RecoveryResult, Regularizer, SampleSet, SolverOptions,
    StepInit,
};
pub use solver::{fit, fit_single_index, fit_thresholded_lasso, kkt_residual, FitReport};
pub use truncation::{TauRule, TruncationScheme};
