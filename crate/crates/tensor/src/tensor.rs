use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::element::Element;
use crate::shape::numel;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether new operations on this thread record a backward graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous grad mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

fn set_grad_mode(enabled: bool) -> GradModeGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    GradModeGuard { prev }
}

/// Disables graph recording until the guard is dropped.
pub fn no_grad() -> GradModeGuard {
    set_grad_mode(false)
}

/// Enables graph recording until the guard is dropped.
pub fn enable_grad() -> GradModeGuard {
    set_grad_mode(true)
}

/// Runs `f` with graph recording disabled.
pub fn with_no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _g = no_grad();
    f()
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the operation inputs, the produced output and the
/// gradient flowing into the output, and returns one optional gradient per
/// input. Implementations must build the returned gradients out of tensor
/// operations so the backward pass itself can be differentiated.
pub trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

pub(crate) struct GradFn<T: Element> {
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) rule: Box<dyn Backward<T>>,
}

pub(crate) struct Node<T: Element> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RwLock<Vec<T>>,
    pub(crate) grad_fn: Option<GradFn<T>>,
    pub(crate) requires_grad: AtomicBool,
}

/// A dense row-major tensor which records the operations producing it.
///
/// Cloning is cheap (reference counted). Data of leaf tensors may be
/// replaced in place through [`Tensor::set_data`], which is how optimizers
/// update parameters.
pub struct Tensor<T: Element = f32>(pub(crate) Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.rule.name()))
            .field("data", &preview)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn new_node(
        data: Vec<T>,
        shape: Vec<usize>,
        grad_fn: Option<GradFn<T>>,
        requires_grad: bool,
    ) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad_fn,
            requires_grad: AtomicBool::new(requires_grad),
        }))
    }

    /// Constant tensor (never requires grad).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), None, false)
    }

    /// Trainable leaf tensor.
    pub fn var(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), None, true)
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![v], &[])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(vec![v; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Standard normal samples.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::from_vec(data, shape)
    }

    /// Result of an operation; records `rule` when grad mode is on and any
    /// input requires grad.
    pub fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        rule: impl Backward<T> + 'static,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let gf = GradFn {
                inputs,
                rule: Box::new(rule),
            };
            Self::new_node(data, shape, Some(gf), true)
        } else {
            Self::new_node(data, shape, None, false)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.load(Ordering::Relaxed)
    }

    /// Freezes or unfreezes a leaf. Operations recorded afterwards see the
    /// new setting, as do backward passes run while frozen.
    pub fn set_requires_grad(&self, on: bool) {
        assert!(self.is_leaf(), "set_requires_grad on a non-leaf tensor");
        self.0.requires_grad.store(on, Ordering::Relaxed);
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the producing operation, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.rule.name())
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Replaces the values of a leaf tensor.
    pub fn set_data(&self, data: Vec<T>) {
        assert!(self.is_leaf(), "set_data on a non-leaf tensor");
        assert_eq!(data.len(), self.numel(), "set_data size mismatch");
        *self.0.data.write().expect("tensor data lock poisoned") = data;
    }

    /// Applies `f` to the values of a leaf tensor in place.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        let mut guard = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_vec(self.to_vec(), self.shape())
    }

    /// A fresh trainable leaf holding a copy of these values.
    pub fn detach_var(&self) -> Self {
        Self::var(self.to_vec(), self.shape())
    }

    /// Converts to another element type (constant result).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::from_vec(data, self.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}
