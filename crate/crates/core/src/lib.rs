//! Prediction-correction interior-point dynamics for time-varying convex
//! programs.
//!
//! The solver state follows an ODE whose vector field combines a Newton-like
//! correction toward the current optimum with a prediction of how that optimum
//! moves in time. Inequality constraints enter through a logarithmic barrier
//! with a growing weight `c(t)` and a decaying slack `s(t)`, so the initial
//! point may be infeasible.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod scenarios;

pub use error::{Error, Result};
