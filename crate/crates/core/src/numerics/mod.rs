//! Dense tensors, forward kernels and a reverse-mode gradient tape.

use alloc::string::String;
use alloc::vec::Vec;

mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradient, finite_difference_check, max_relative_error, numeric_gradient};
pub use ops::{layer_norm, masked_softmax, matmul};
pub use optim::Adam;
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Scalar, Tensor};

/// Default epsilon for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("masked_softmax: row {row} has no unmasked entry")]
    FullyMaskedRow { row: usize },
    #[error("variable is not recorded on this tape")]
    NotOnTape,
    #[error("expected a single-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("function value is not finite")]
    NonFinite,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op}: expected length {expected}, got {found}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("invalid axis {axis}")]
    InvalidAxis { axis: usize },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
}

impl NumericsError {
    pub(crate) fn shape_mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests;

/// `1 / sqrt(n)`, usable without `std`.
pub(crate) fn inv_sqrt(n: usize) -> f64 {
    1.0 / num_traits::Float::sqrt(n as f64)
}
