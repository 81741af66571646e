//! Reverse-mode autodiff over (batch, channels, length) float64 tensors.
//!
//! The operator set is exactly what the depth regression networks need:
//! dilated 1D convolution, batch normalization, ReLU, residual addition,
//! softmax along the length axis, windowed soft-argmax, and an L1 loss,
//! plus an Adam optimizer, a finite-difference gradient checker, and a
//! bit-exact binary checkpoint format.
//!
//! A [`Tape`] borrows a [`Params`] arena immutably, records the forward
//! pass as a flat list of nodes, and replays it in reverse on
//! [`Tape::backward`], accumulating parameter gradients into a separate
//! [`Grads`] buffer. Every forward op verifies its output is finite, so a
//! numerical blowup surfaces at the op that produced it.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::CheckpointRecord;
pub use layers::{BatchNorm1D, Conv1D, Grads, ParamId, Params};
pub use optim::Adam;
pub use tape::{BatchNormBatch, Tape, VarId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors surfaced by tensor ops, training, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum NnError {
    /// Operand shapes are incompatible with the op.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// An op produced NaN or infinity.
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    /// Backward was called without a recorded forward pass.
    #[error("no recorded graph")]
    NoGraph,
    /// Backward already ran on this recording; reset and re-record first.
    #[error("backward already consumed the recorded graph; record a new forward pass")]
    GraphConsumed,
    /// A gradient was NaN or infinite; the optimizer left parameters untouched.
    #[error("non-finite gradient; optimizer step aborted")]
    NonFiniteGradient,
    /// Malformed or inconsistent checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
