//! Drift sensitivity of reflected stochastic differential equations.
//!
//! - [`sde`]: models, box domains with mirror reflection, Euler–Maruyama
//!   ensembles keyed by counter-based seeds.
//! - [`girsanov`]: Ito weight, quadratic variation and exponential martingale
//!   along base paths, and reweighted expectations.
//! - [`sensitivity`]: Frechet derivative of expected path functionals, the
//!   coupled finite-difference oracle, remainder and its decay order.
//! - [`ulam`]: histogram transition kernels, Perron–Frobenius / Koopman
//!   matrices and their Girsanov derivative.
//! - [`spectral`]: eigenpairs, singular triplets, linear response, periodic
//!   stationary families and ergodic averages.
//! - [`experiments`]: config-driven experiment runner behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod girsanov;
pub mod linalg;
pub mod sde;
pub mod sensitivity;
pub mod spectral;
pub mod ulam;

pub use error::{Error, Result};
