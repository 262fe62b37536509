//! Dense f64 tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value: a shape plus row-major f64 storage, immutable
//! after construction. All differentiable computation goes through a
//! [`GradTape`], which records every primitive op and replays the record in
//! reverse for gradients. [`gradcheck`] provides the central finite-difference
//! oracle used to validate every backward rule.
//!
//! Any forward op that produces a non-finite value fails immediately with
//! [`Error::Numeric`]; NaN never propagates silently.

mod tape;

pub mod gradcheck;


pub use tape::{GradTape, Gradients, TensorId};

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, checking `product(shape) == data.len()` and finiteness.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {bad} in tensor construction")));
        }
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], requires_grad: false }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![v], &[1])
    }

    /// Mark as a gradient leaf (consumed by [`GradTape::leaf`]).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() requires a scalar, tensor has {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }
}

/// Verify invariants on freshly computed op output.
pub(crate) fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{op} produced non-finite value {bad}")));
    }
    Ok(())
}
