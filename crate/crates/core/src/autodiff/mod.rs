//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they execute; [`Graph::backward`]
//! replays their adjoints in reverse insertion order, which is a valid
//! topological order because every node is appended after its inputs.
//!
//! Conventions used throughout:
//! - Binary elementwise operations broadcast by trailing-dimension alignment
//!   (see [`broadcast_shape`]).
//! - Reductions remove the reduced dimensions; reducing every axis yields a
//!   scalar of shape `[]`.
//! - Images are laid out `H×W×C`, convolution kernels `kh×kw×Cin×Cout`.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState, ParamSet};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_FD_STEP, REL_ERROR_FLOOR};
pub use graph::{ElementwiseKind, Gradients, Graph, Padding, ReduceKind, ResizeDirection, Var};
pub use tensor::{broadcast_shape, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("axis {axis} is invalid for a rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("log of non-positive value {value} at flat index {index}")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("kernel {kernel:?} larger than padded input {input:?}")]
    KernelTooLarge { kernel: (usize, usize), input: (usize, usize) },
    #[error("dimension {dim} is not divisible by downsampling factor {factor}")]
    NonDivisible { dim: usize, factor: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph was already backpropagated; build a new forward pass first")]
    AlreadyBackpropagated,
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("optimizer state does not match parameter {0}")]
    StateMismatch(String),
}
