// Negated comparisons such as `!(x > 0.0)` are used on purpose so that NaN
// fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nb;
pub mod simulation;
pub mod special;

pub use error::{GbmError, Result};
