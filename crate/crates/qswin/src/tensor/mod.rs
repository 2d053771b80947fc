//! Minimal reverse-mode automatic differentiation over dense `f32` arrays.
//!
//! A [`Tensor`] is an immutable row-major array with an optional gradient
//! slot; a [`Tape`] records every differentiable operation as it executes
//! (define-by-run) and replays the records in reverse to accumulate
//! gradients into the leaves. Tensors and tapes are single-threaded by
//! design; independent tapes may run on separate threads.

mod ops;
mod tape;

pub mod gradcheck;

pub use tape::Tape;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

// Monotone ids let the tape assert its topological invariant cheaply.
static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
}

/// Dense n-dimensional array of `f32` in row-major order. Cloning is cheap
/// (shared storage); data is immutable once created, only the gradient slot
/// mutates.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl Tensor {
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::contract(
                "tensor",
                format!("zero-sized dimension in shape {:?}", shape),
            ));
        }
        Ok(Tensor::raw(data, shape.to_vec(), false))
    }

    /// A trainable leaf: `requires_grad` is set and backward passes
    /// accumulate into its gradient slot.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        Ok(Tensor::raw(t.inner.data.clone(), t.inner.shape.clone(), true))
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::raw(vec![value], vec![], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::raw(vec![0.0; numel], shape.to_vec(), false)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::raw(vec![1.0; numel], shape.to_vec(), false)
    }

    pub(crate) fn raw(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1, "item() on a tensor with {} elements", self.numel());
        self.inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<f32> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data)
            .finish()
    }
}
