//! Dense tensors and reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; computations are recorded on a [`Tape`] and
//! referenced through [`Var`] handles. Every op validates shapes and refuses
//! to produce non-finite values.

mod gradcheck;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, sample_smooth_point, GradCheck};
pub use ops::BatchStats;
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: extents must be positive")]
    BadShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: temporal extent {len} is shorter than {needed}")]
    Extent {
        op: &'static str,
        len: usize,
        needed: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: no inputs")]
    Empty { op: &'static str },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("detached root: no recorded op depends on a trainable input")]
    DetachedRoot,
}
