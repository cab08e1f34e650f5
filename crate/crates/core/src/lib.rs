//! Training-free chance-constrained sampling for flow matching models.
//!
//! Samplers integrate the exact velocity of the linear (optimal-transport)
//! path toward a Gaussian-mixture or empirical target, and keep each state
//! inside a time-dependent tightening of the target's constraints. A final
//! Gauss-Newton refinement enforces the constraints exactly on the sample.
//! `verify` holds the independent oracles used by the acceptance suite.

// NaN must fail every validation check, so guards are written `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod num;

pub use error::{Error, Result};

pub mod chance;
pub mod constraints;
pub mod experiment;
pub mod flow;
pub mod io;
pub mod pde;
pub mod projection;
pub mod samplers;
pub mod verify;
