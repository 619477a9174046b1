//! Dense row-major tensors and a single-threaded gradient tape.
//!
//! Values live in [`Tensor`]; differentiable computation happens through
//! [`Var`] handles recorded on a [`Tape`]. Every forward op validates shapes
//! up front and rejects non-finite results, so a NaN never travels further
//! than the op that produced it.

mod error;
pub mod gradcheck;
mod kernels;
mod ops;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use real::{DType, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
