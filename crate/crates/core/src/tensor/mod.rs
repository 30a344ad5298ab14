//! Dense double-precision tensors with reverse-mode automatic differentiation.
//!
//! Everything is deliberately desk-scale: row-major `Vec<f64>` storage, no
//! broadcasting beyond last-axis masks, and a tape-style graph that visits
//! each node exactly once on the backward pass.

mod adam;
mod graph;
pub mod ops;

pub use adam::{AdamHyper, AdamState};
pub use graph::{Gradients, Graph, Var};

use thiserror::Error;

/// Additive mask value that marks an attention connection as dropped.
///
/// A numerically safe stand-in for negative infinity: any mask entry at or
/// below [`DROP_THRESHOLD`] is treated as fully dropped and its output
/// probability is exactly zero.
pub const DROP_SENTINEL: f64 = -1e9;

/// Mask entries strictly above this value are "keep", at or below are "drop".
pub const DROP_THRESHOLD: f64 = -1e8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} expects {expected}, got lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor data length {len} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("{op}: NaN in input")]
    NanInput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("cross_entropy target {target} out of range for {len} logits")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("adam: parameter {name} has no matching {missing}")]
    AdamMissing { name: String, missing: &'static str },
    #[error("index {index} out of range for axis of extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
}

/// Dense tensor: row-major `f64` values plus an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data, checking the length.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-D tensor from nested rows; all rows must share a length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::InvalidShape {
                    op: "matrix",
                    shape: vec![r, c],
                    reason: format!("row of length {} in a {}-column matrix", row.len(), c),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![r, c],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when the tensor is viewed as `[rows × last_extent]`.
    pub fn leading_rows(&self) -> usize {
        match self.shape.split_last() {
            Some((_, lead)) => lead.iter().product(),
            None => 1,
        }
    }

    /// Extent of the last axis (1 for a true scalar).
    pub fn last_extent(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2-D element access; panics out of bounds like slice indexing.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data.clone())
    }
}
