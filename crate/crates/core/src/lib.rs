//! Data-driven predictive control built directly on recorded input/output
//! trajectories: Hankel predictors, a condensed QP planner, dataset
//! selection over a bank of recordings, reference generation, and the
//! simulated plants used to exercise them.

// Validation is written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsa;
pub mod error;
pub mod linalg;
pub mod mlp;
pub mod planner;
pub mod plants;
pub mod predictor;
pub mod qp;
pub mod refgen;
pub mod trajectory;

pub use error::{Error, Result};
