//! Minimal reverse-mode differentiation layer.
//!
//! Records a fixed set of tensor operations on a [`Tape`] during the forward
//! pass and replays them in reverse to accumulate gradients. Deliberately
//! small: just enough to train the price-volume encoder and the hourly
//! sequence policy in f64, deterministically.

mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{clip_grad_norm, sgd_step, AdamState, Binding, Gradients, ParamSet};
pub use tape::{causal_self_attention, linear, mse, AttentionWeights, Tape, TensorId};
pub use tensor::Tensor;

use std::fmt;

/// Errors raised by the differentiation layer.
#[derive(Debug, Clone, PartialEq)]
pub enum SubstrateError {
    /// Operand shapes do not conform; carries a dimension report.
    ShapeMismatch { op: &'static str, detail: String },
    /// Tensor constructed with a value buffer of the wrong length.
    LengthMismatch { expected: usize, got: usize },
    /// A forward or backward pass produced NaN/Inf.
    NonFinite { context: String },
    /// Sequence longer than the configured attention context.
    ContextOverflow { len: usize, max: usize },
    /// Bad argument outside the shape system (e.g. lr <= 0).
    InvalidArgument(String),
    /// Checkpoint file could not be read or written.
    Io(String),
    /// Checkpoint text is malformed.
    Parse { line: usize, message: String },
}

impl fmt::Display for SubstrateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubstrateError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            SubstrateError::LengthMismatch { expected, got } => {
                write!(f, "value buffer length {got} does not match shape product {expected}")
            }
            SubstrateError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            SubstrateError::ContextOverflow { len, max } => {
                write!(f, "sequence length {len} exceeds attention context {max}")
            }
            SubstrateError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            SubstrateError::Io(msg) => write!(f, "checkpoint io: {msg}"),
            SubstrateError::Parse { line, message } => {
                write!(f, "checkpoint parse error at line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for SubstrateError {}
