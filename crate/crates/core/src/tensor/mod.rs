//! A minimal tensor engine with reverse-mode differentiation.
//!
//! Tensors are row-major float arrays. Operations record a tape node with a
//! backward closure; calling [`Tensor::backward`] on a scalar loss walks the
//! tape in reverse topological order and accumulates gradients into every
//! tensor that requires them. The element type is generic so the production
//! 32-bit path can be shadowed by a 64-bit instantiation for
//! finite-difference gradient checks.

mod ops;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward already ran on this tape; rebuild the graph before calling again")]
    StaleTape,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    Label {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Element type of the engine: `f32` in production, `f64` for gradient
/// checking.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant conversion")
    }
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording tape nodes (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
    backward_ran: Cell<bool>,
}

/// An N-dimensional row-major array participating in the gradient tape.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward_fn: Option<BackwardFn<T>>,
    ) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        let grad = requires_grad.then(|| vec![T::zero(); data.len()]);
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(grad),
                requires_grad,
                parents,
                backward_fn,
                backward_ran: Cell::new(false),
            }),
        }
    }

    /// A constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// A trainable leaf: gradients accumulate into a zero-initialized buffer.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape.to_vec(), data, true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    /// Create an op-output node. When gradients are disabled or no parent is
    /// tracked, the node degenerates to a constant leaf and the closure is
    /// dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward_fn: impl Fn(&[T]) + 'static,
    ) -> Self {
        let tracked = grad_enabled() && parents.iter().any(|p| p.is_tracked());
        if tracked {
            Self::build(shape, data, false, parents, Some(Box::new(backward_fn)))
        } else {
            Self::build(shape, data, false, Vec::new(), None)
        }
    }

    fn is_tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.backward_fn.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn data_ref(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Copy of the tensor's values.
    pub fn values(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn value_at(&self, i: usize) -> T {
        self.inner.data.borrow()[i]
    }

    /// Overwrite one element (parameter perturbation, optimizer updates).
    pub fn set_value_at(&self, i: usize, v: T) {
        self.inner.data.borrow_mut()[i] = v;
    }

    /// Replace the whole buffer; shape must be preserved.
    pub fn set_values(&self, values: &[T]) {
        let mut data = self.inner.data.borrow_mut();
        assert_eq!(data.len(), values.len());
        data.copy_from_slice(values);
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    /// Reset the gradient buffer to zeros (allocating it if needed).
    pub fn zero_grad(&self) {
        let n = self.numel();
        *self.inner.grad.borrow_mut() = Some(vec![T::zero(); n]);
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode accumulation from a scalar loss. Fills the gradient of
    /// every tensor that requires one; repeated invocation on the same node
    /// is an error until a fresh graph is built.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.inner.shape.clone()));
        }
        if self.inner.backward_ran.get() {
            return Err(TensorError::StaleTape);
        }
        self.inner.backward_ran.set(true);

        // iterative post-order DFS for a deterministic topological order
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child)) = stack.pop() {
            if child < node.inner.parents.len() {
                let next = node.inner.parents[child].clone();
                stack.push((node, child + 1));
                if next.inner.backward_fn.is_some() && visited.insert(next.inner.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            if let Some(backward_fn) = &node.inner.backward_fn {
                let grad = node.inner.grad.borrow().clone();
                if let Some(grad) = grad {
                    backward_fn(&grad);
                }
            }
        }
        Ok(())
    }
}

/// Central finite difference of `loss_fn` with respect to one coordinate of
/// `param`. The parameter value is restored afterwards.
pub fn numeric_grad<T: Scalar>(
    param: &Tensor<T>,
    coord: usize,
    step: f64,
    mut loss_fn: impl FnMut() -> f64,
) -> f64 {
    let original = param.value_at(coord);
    let x = original.to_f64c();
    param.set_value_at(coord, T::from_f64c(x + step));
    let plus = loss_fn();
    param.set_value_at(coord, T::from_f64c(x - step));
    let minus = loss_fn();
    param.set_value_at(coord, original);
    (plus - minus) / (2.0 * step)
}

pub use ops::RelBiasIndex;
