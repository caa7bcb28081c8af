//! Bandit linear control of a known linear system under adversarial convex
//! costs, observed only through scalar (bandit) feedback.

// Negated comparisons are used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bco_base;
pub mod bco_memory;
pub mod controller;
pub mod costs;
pub mod dap;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod plant;
pub mod stability;

pub use error::{Error, Result};
