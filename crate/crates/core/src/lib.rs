//! Spectral simulation of semilinear stochastic evolution equations
//! `dX = (AX + F(X)) dt + Q^α dW` in a truncated eigenbasis of `Q`, with
//! Monte Carlo estimators for the transition semigroup and its gradient.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod covariance;
pub mod drift;
pub mod engine;
pub mod error;
pub mod lab;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod stats;
pub mod vector;
pub mod verify;

pub use covariance::{w12_seminorm, GridFunction, KernelSpec, SpectralFrame};
pub use error::{Error, Result};
pub use scalar::Real;
pub use spectral::{CovarianceDiagonal, DiagonalPropagator, PdReport, SpectrumQ};
pub use vector::HVector;

pub type Spectrum = SpectrumQ<f64>;
pub type Vector = HVector<f64>;
