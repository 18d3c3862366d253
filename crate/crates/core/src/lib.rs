//! Rotation vectors of flows of periodic vector fields on ℝⁿ.
//!
//! Two independent routes: integrate the flow and read off the average
//! velocity, or solve a fixed-point problem built from the Jacobian along a
//! straight line.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod error;
pub mod export;
pub mod field;
pub mod flow;
pub mod leader;
pub mod psi;
pub mod riccati;
pub mod solver;
pub mod tongue;

pub use error::{Error, Result};
