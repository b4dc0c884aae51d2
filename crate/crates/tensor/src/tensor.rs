use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations on this thread currently record a graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous recording mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        Self { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

/// Backward rule of a recorded operation.
///
/// Rules are written in terms of differentiable tensor operations, so when
/// the engine runs them with recording enabled the resulting gradients carry
/// their own graph (this is what makes gradient penalties trainable).
pub(crate) trait Backward<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input; entries whose `needs` flag is false
    /// may be `None`.
    fn backward(
        &self,
        inputs: &[Tensor<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

pub(crate) struct GradFn<T: Real> {
    pub(crate) op: Box<dyn Backward<T>>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

pub(crate) struct Node<T: Real> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) grad_fn: Option<GradFn<T>>,
}

/// An immutable n-dimensional array that optionally records the operation
/// that produced it.
///
/// Cloning is cheap (reference counted). Tensors are `Send + Sync`; the
/// recording flag is per thread, so concurrent inference under `no_grad`
/// never touches shared state.
pub struct Tensor<T: Real> {
    pub(crate) node: Arc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.op.name());
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &op)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn new_node(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// A tensor that is never differentiated.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(Arc::new(data), shape.to_vec(), false, None)
    }

    /// A differentiable leaf (a trainable parameter or a gradient-penalty
    /// interpolate).
    pub fn leaf(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(Arc::new(data), shape.to_vec(), true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::from_vec(vec![v; n], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![v], &[])
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    /// Result of a recorded operation. Records only if recording is enabled
    /// and some input is differentiable.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: impl Backward<T> + 'static,
        inputs: Vec<Tensor<T>>,
    ) -> Self {
        Self::from_op_shared(Arc::new(data), shape, op, inputs)
    }

    pub(crate) fn from_op_shared(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        op: impl Backward<T> + 'static,
        inputs: Vec<Tensor<T>>,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = track.then(|| GradFn {
            op: Box::new(op),
            inputs,
        });
        Self::new_node(data, shape, track, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dims(&self) -> usize {
        self.node.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Same values, cut from the graph. Shares storage.
    pub fn detach(&self) -> Self {
        Self::new_node(Arc::clone(&self.node.data), self.node.shape.clone(), false, None)
    }

    /// A fresh differentiable leaf sharing this tensor's storage.
    pub fn detach_leaf(&self) -> Self {
        Self::new_node(Arc::clone(&self.node.data), self.node.shape.clone(), true, None)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.data().iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            self.shape(),
        )
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op.name())
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
