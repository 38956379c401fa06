// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod corrector;
pub mod diff;
mod error;
pub mod kinematics;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
