//! Nonparametric estimation of radial interaction kernels in interacting
//! particle systems by the tamed least-squares estimator (tLSE).
//!
//! Observations follow `Y = R_φ[X] + η` where
//! `R_φ[X]_i = (1/N) Σ_{j≠i} φ(|X_i − X_j|)(X_i − X_j)/|X_i − X_j|`.
//! The crate simulates such data, builds orthonormal bases of `L²_ρ` for the
//! pairwise-distance measure ρ, assembles normal systems, estimates φ, and
//! provides numerical checks of the coercivity, tail-bound and lower-bound
//! machinery that governs the estimator's convergence rate.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod estimator;
pub mod io;
pub mod kernels;
pub mod lowerbound;
pub mod measure;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
