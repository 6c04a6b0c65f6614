//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles.
//! Calling [`Tape::backward`] on a one-element result sweeps the record in
//! reverse and returns gradients for every node that requires one.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ADAM_LR};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Named parameter tensors in a stable (sorted) order.
pub type ParamMap = std::collections::BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
