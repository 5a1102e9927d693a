//! Dense f64 tensors with reverse-mode autodiff and an instrumented
//! multiply-accumulate counter.
//!
//! A [`Tensor`] is an immutable row-major value; arithmetic goes through a
//! [`Tape`], which records backward closures for any input that was
//! registered as a differentiable leaf via [`Tape::var`]. Tensors that never
//! touch `var` flow through the same ops without recording anything, so the
//! forward path is identical whether or not gradients are wanted.

mod checkpoint;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Dense multi-dimensional array of f64, row-major, cheap to clone.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Argument(format!(
                "shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data), node: None })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "zero extent in shape {shape:?}");
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; numel]), node: None }
    }

    /// 1-element tensor holding `value`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| f(i)).collect();
        Tensor { shape: shape.to_vec(), data: Arc::new(data), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, id: NodeId) -> Tensor {
        self.node = Some(id);
        self
    }

    /// Same values, no tape attachment: gradient will not flow past this.
    pub fn detached(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Element at a full multi-index (test / debug convenience).
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            assert!(i < self.shape[d], "index {idx:?} out of shape {:?}", self.shape);
            flat = flat * self.shape[d] + i;
        }
        self.data[flat]
    }

    /// Error out if any element is NaN or infinite.
    pub fn validate_finite(&self, label: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{label}[{i}] = {v}")));
            }
        }
        Ok(())
    }
}

/// Row-major strides of a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}
