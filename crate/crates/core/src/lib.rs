//! Rate-distortion explanations for black-box models.

// `!(x > 0.0)` style guards deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distortions;
pub mod error;
pub mod obfuscations;
pub mod models;
pub mod objective;
pub mod pipelines;
pub mod representations;
pub mod solvers;
pub mod types;

pub use error::{RdeError, Result};
