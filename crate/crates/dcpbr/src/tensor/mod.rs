//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tensor`] is a flat row-major buffer plus a shape. Tensors created
//! through [`Tape`] methods record the producing operation on the tape;
//! tensors built with the plain constructors are constants and contribute
//! no gradient. [`Tape::backward`] sweeps the recorded nodes in reverse
//! topological order and returns a gradient per tracked node.
//!
//! Image-like data uses the `[batch, channels, height, width]` layout.
//! Elementwise operations broadcast numpy-style (trailing-aligned, any
//! extent may be 1); structured operations (convolution, normalization,
//! up/down-sampling, channel concat/slice) require rank-4 operands.

mod ops;
mod tape;

pub use tape::{Gradients, NodeId, Tape};

use std::sync::Arc;

/// Dense multi-dimensional array of 64-bit floats, optionally attached to a
/// gradient tape node.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Constant tensor (no tape node, zero gradient contribution).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} data elements",
            shape,
            data.len()
        );
        Tensor { shape, data: Arc::new(data), node: None }
    }

    /// Constant scalar with shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(vec![1], vec![value])
    }

    /// Constant tensor filled with `value`.
    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![value; n])
    }

    /// Constant tensor of zeros.
    pub fn zeros(shape: Vec<usize>) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Same values, detached from any tape. Shares the underlying buffer.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<f64>, node: NodeId) -> Self {
        Tensor { shape, data: Arc::new(data), node: Some(node) }
    }

    pub(crate) fn untracked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { shape, data: Arc::new(data), node: None }
    }
}

/// Interprets a shape as `[B, C, H, W]`, or fails naming the operation.
pub(crate) fn dims4(
    shape: &[usize],
    op: &'static str,
) -> crate::Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(crate::Error::ShapeMismatch {
            op,
            detail: format!("expected rank-4 [B,C,H,W] tensor, got shape {shape:?}"),
        });
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}
