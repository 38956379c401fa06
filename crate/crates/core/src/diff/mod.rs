//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive evaluated through a [`Var`] together
//! with what its local derivative needs. [`Tape::backward`] then walks the
//! record once in reverse and accumulates gradients into the differentiable
//! leaves. Tapes are built per evaluation and dropped afterwards.
//!
//! ```
//! use silgrad::diff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).data(), &[2.0, 4.0, 6.0]);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, GradCheckReport};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Errors raised while recording or differentiating.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis { op: &'static str, axis: usize, shape: Vec<usize> },
    #[error("slice {start}..{end} on axis {axis} out of range for shape {shape:?}")]
    Slice { axis: usize, start: usize, end: usize, shape: Vec<usize> },
    #[error("{op}: no inputs")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("function is not finite at probe x0{sign}eps*e[{coordinate}]")]
    NonFinite { coordinate: usize, sign: char },
}

#[cfg(test)]
mod tests;
