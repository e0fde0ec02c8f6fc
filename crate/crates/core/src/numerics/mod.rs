//! Dense f64 tensors with reverse-mode differentiation, loss primitives and
//! the AdamW optimizer.
//!
//! Everything is 64-bit: the models here are tiny and exact gradient checks
//! matter more than speed.

mod adamw;
pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adamw::{AdamWHyperparams, AdamWState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {actual:?}")]
    Contract {
        op: &'static str,
        expected: &'static str,
        actual: Vec<usize>,
    },
    #[error("non-finite value in input of {0}")]
    NonFiniteInput(&'static str),
    #[error("label {0} outside {{0, 1, .., {1}}}")]
    BadLabel(u8, usize),
    #[error("class weights must be positive, got {0}")]
    BadClassWeight(f64),
    #[error("mask selects no cells")]
    DegenerateMask,
    #[error("invalid node id {0}")]
    BadNodeId(usize),
    #[error("optimizer hyperparameter {name} must be positive, got {value}")]
    BadHyperparam { name: &'static str, value: f64 },
    #[error("optimizer state holds {expected} parameters, got {actual}")]
    ParamCountMismatch { expected: usize, actual: usize },
}

/// Row-wise numerically stable softmax over the last dimension.
///
/// Errors on non-finite inputs; each output row sums to 1 within 1e-12.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NumericsError> {
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteInput("softmax"));
    }
    let cols = *logits.shape().last().ok_or(NumericsError::Contract {
        op: "softmax",
        expected: "a tensor with at least one dimension",
        actual: vec![],
    })?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(cols) {
        kernels::softmax_row(row);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean over the batch of `w[y_i] * (-log softmax(z_i)[y_i])`.
///
/// `logits` is B x C row-major, `labels` holds class indices, `class_weights`
/// has one positive weight per class.
pub fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[u8],
    class_weights: &[f64],
) -> Result<f64, NumericsError> {
    let (batch, classes) = logits.as_matrix_dims("weighted_cross_entropy")?;
    if labels.len() != batch {
        return Err(NumericsError::ShapeMismatch {
            op: "weighted_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if class_weights.len() != classes {
        return Err(NumericsError::ShapeMismatch {
            op: "weighted_cross_entropy",
            lhs: vec![classes],
            rhs: vec![class_weights.len()],
        });
    }
    for &w in class_weights {
        if !(w > 0.0) {
            return Err(NumericsError::BadClassWeight(w));
        }
    }
    let mut total = 0.0;
    for (i, row) in logits.data().chunks(classes).enumerate() {
        let y = labels[i] as usize;
        if y >= classes {
            return Err(NumericsError::BadLabel(labels[i], classes - 1));
        }
        total += class_weights[y] * -kernels::log_softmax_at(row, y);
    }
    Ok(total / batch as f64)
}

/// Mean squared error, optionally restricted to cells where `mask` is true.
pub fn mse(pred: &Tensor, target: &Tensor, mask: Option<&[bool]>) -> Result<f64, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "mse",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "mse",
                lhs: pred.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    kernels::masked_mse(pred.data(), target.data(), mask).ok_or(NumericsError::DegenerateMask)
}
