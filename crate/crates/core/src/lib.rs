//! Balanced truncation for linear Gaussian inference and data assimilation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fourdvar;
pub mod gramians;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod reduction;
pub mod rng;

pub use error::{Error, Result};
