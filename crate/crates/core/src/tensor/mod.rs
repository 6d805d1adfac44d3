//! Dense `f64` tensors with a define-by-run reverse-mode tape.
//!
//! Every differentiable operation on a [`Tensor`] whose inputs carry gradients
//! appends a node to a thread-local tape. [`backward`] walks that tape in
//! reverse recording order and accumulates gradients into grad-enabled
//! leaves. [`no_grad`] suspends recording for a scope.
//!
//! ```
//! use novas_core::tensor::{self, Tensor};
//!
//! let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
//! let loss = x.square().sum_all();
//! tensor::backward(&loss).unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
//! tensor::clear_tape();
//! ```

mod linalg;
mod ops;
mod reduce;
mod shape;
mod tape;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use shape::broadcast_shape;
pub use tape::{backward, clear_tape, is_recording, no_grad, tape_len};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("division by zero at element {index}")]
    DivisionByZero { index: usize },
    #[error("{op}: NaN in input")]
    NaN { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    leaf: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Reference-counted handle to a dense row-major array of `f64`.
///
/// Cloning a `Tensor` clones the handle, not the data.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, leaf: bool) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: tape::next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            leaf,
            grad: RefCell::new(None),
        }))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::build(data, shape.to_vec(), false, true))
    }

    /// Grad-enabled leaf. Inside [`no_grad`] the leaf is created without
    /// gradient tracking.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::build(data, shape.to_vec(), is_recording(), true))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![value], Vec::new(), false, true)
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::build(data, vec![n], false, true)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(vec![value; numel_of(shape)], shape.to_vec(), false, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    /// Build the output of a differentiable operation. `make_backward` is only
    /// invoked when the node is actually recorded.
    pub(crate) fn from_op<F>(
        data: Vec<f64>,
        shape: Vec<usize>,
        inputs: &[&Tensor],
        make_backward: F,
    ) -> Tensor
    where
        F: FnOnce() -> BackwardFn,
    {
        let record = is_recording() && inputs.iter().any(|t| t.requires_grad());
        if !record {
            return Tensor::build(data, shape, false, true);
        }
        let out = Tensor::build(data, shape, true, false);
        tape::record(
            inputs.iter().map(|t| (*t).clone()).collect(),
            out.clone(),
            make_backward(),
        );
        out
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.leaf
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Overwrite the values of a leaf in place (optimizer updates).
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// Constant copy sharing no history with `self`.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.to_vec(), self.0.shape.clone(), false, true)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &preview)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
