//! Learning autoregressive prediction filters from designed experiments.
//!
//! The crate estimates a filter pair `(g, h)` for the predictor
//! `y(t+1) ≈ (g * x)(t) + (h * y)(t)` from rollouts driven by zero inputs
//! and by equispaced cosines/sines, using a robust min-max objective over
//! frequencies. Tools are provided to unroll steady-state Kalman predictors
//! into such filters, to bound their truncation error, and to evaluate
//! learned filters in H-infinity/H2 terms.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod expkit;
pub mod lds;
pub mod linalg;
pub mod rollout;
pub mod signal;

pub use error::{ArfiltError, Result};
pub use signal::Filter;
