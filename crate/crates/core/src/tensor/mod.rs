//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] owns a row-major buffer and, when it was produced by a tracked
//! operation, a backward record pointing at its parents. Calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse topological
//! order and accumulates gradients into every leaf created with
//! [`Tensor::param`].
//!
//! The element type is generic over [`Real`]; training runs in `f32` and the
//! gradient checks run the same code in `f64`.

mod conv;
mod elementwise;
mod image_ops;
mod reduce;
mod shape_ops;

pub use image_ops::WaveletBands;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating point element type usable by the tensor engine.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// `c = a · b (+ c when accumulate)` for row-major `a: m×k`, `b: k×n`.
    /// `trans_a` / `trans_b` read the operand as stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the bounds assert above covers every index the
                // strides can reach, and `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}: empty tensor")]
    Empty(&'static str),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Computes parent gradient contributions from `(grad_out, out_data, needs)`.
/// Returns one entry per parent; `None` where the parent does not need it.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Real> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: RwLock<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Reference-counted handle to a dense tensor. Cloning is cheap and shares
/// storage.
pub struct Tensor<T: Real = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("op", &self.inner.node.as_ref().map(|n| n.op))
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let grad = if requires_grad {
            Some(vec![T::zero(); data.len()])
        } else {
            None
        };
        Self {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: RwLock::new(grad),
                requires_grad,
                node,
            }),
        }
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf with a zeroed gradient buffer.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    /// Result of an operation. Records `backward` only when grad mode is on and
    /// at least one parent participates in the graph.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.tracks_grad());
        let node = track.then(|| Node {
            op,
            parents,
            backward,
        });
        Self::build(shape, data, false, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when gradients flow through this tensor (a trainable leaf or the
    /// output of a recorded operation).
    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the value buffer. Intended for optimizers and tests
    /// that perturb leaves; graphs built from the old values are not updated.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.read().expect("grad lock poisoned").clone()
    }

    pub fn grad_mut(&self) -> RwLockWriteGuard<'_, Option<Vec<T>>> {
        self.inner.grad.write().expect("grad lock poisoned")
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.grad_mut().as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Self {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Same values converted to another element type, without graph.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
            .collect();
        Tensor::build(self.shape().to_vec(), data, false, None)
    }

    /// Back-propagates from this scalar, accumulating into leaf gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            if t.inner.requires_grad {
                if let Some(buf) = t.grad_mut().as_mut() {
                    for (b, v) in buf.iter_mut().zip(&g) {
                        *b += *v;
                    }
                }
            }
            let Some(node) = &t.inner.node else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| p.tracks_grad()).collect();
            let contributions = {
                let out = t.data();
                (node.backward)(&g, &out, &needs)
            };
            debug_assert_eq!(contributions.len(), node.parents.len(), "{}", node.op);
            for (parent, contrib) in node.parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !parent.tracks_grad() {
                    continue;
                }
                debug_assert_eq!(c.len(), parent.numel(), "{} grad length", node.op);
                match grads.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&c) {
                            *a += *v;
                        }
                    }
                    None => {
                        grads.insert(parent.id(), c);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that carry gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.tracks_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
