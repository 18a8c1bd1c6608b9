//! Model-free bootstrap for strictly stationary time series.
//!
//! The pipeline maps an observed series through its estimated marginal CDF
//! and a thresholded normal quantile into an approximately Gaussian latent
//! series, whitens that series with the Cholesky factor of a flat-top
//! tapered Toeplitz covariance estimate, resamples the whitened residuals
//! (MF) or draws them from their N(0, 1) limit (LMF), and maps back.
//!
//! Modules:
//! - [`transform`]: CDF estimates and the PIT chain
//! - [`covariance`]: tapered Toeplitz covariance, banded Cholesky
//! - [`statistic`]: estimators the bootstrap can target
//! - [`bootstrap`]: confidence intervals
//! - [`prediction`]: one-step-ahead prediction intervals
//! - [`baselines`]: block bootstrap and AR-sieve comparisons
//! - [`harness`]: data-generating models and coverage experiments

// Negated comparisons are used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bootstrap;
pub mod covariance;
pub mod error;
pub mod harness;
pub mod normal;
pub mod prediction;
pub mod rng;
pub mod statistic;
pub mod transform;

pub use error::{BootError, Result};
