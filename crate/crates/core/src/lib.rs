//! Finite-difference solvers and verification tools for Dirichlet problems of
//! regularized p-Laplacian type,
//!
//! ```text
//! −∇·((μ + |∇u|)^{p−2} ∇u) = f  in Ω,   u = 0 on ∂Ω,
//! ```
//!
//! for `N`-component fields on boxes in two or three dimensions, `1 < p ≤ 2`,
//! `μ ≥ 0`.
//!
//! - [`grid`]: boxes, nodal fields, Dirichlet data and binary field dumps.
//! - [`calculus`]: central-difference jets, the cubic term, discrete norms.
//! - [`linear_elliptic`]: Poisson solves and empirical regularity constants.
//! - [`nonlinear_solver`]: the linearized map and its damped fixed-point iteration.
//! - [`oracle_minimizer`]: energy minimization on a variational discretization.
//! - [`inequality_lab`]: randomized checks of the pointwise inequalities.
//! - [`continuation`]: the vanishing-regularization limit `μ → 0`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil loops index several arrays by the same axis.
#![allow(clippy::needless_range_loop)]

pub mod calculus;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod inequality_lab;
pub mod linear_elliptic;
pub mod nonlinear_solver;
pub mod oracle_minimizer;

pub use error::{Error, Result};
pub use grid::{Grid, VectorField};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
