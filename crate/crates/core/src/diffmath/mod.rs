//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.

mod array;
pub mod dist;
pub mod nn;
mod params;
pub mod segment;
mod tape;

pub use array::Array;
pub use dist::{diag_gaussian_kl, gaussian_log_prob, positive_std, reparam_sample, MIN_STD};
pub use params::{clip_global_norm, global_norm, Adam, Bound, ParamId, ParameterSet, StepOutcome};
pub use tape::{Grads, Node, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: standard deviation must be positive, got {value}")]
    NonPositiveStd { op: &'static str, value: f64 },
    #[error("{0}: no inputs")]
    Empty(&'static str),
}
