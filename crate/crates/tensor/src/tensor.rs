//! The dense tensor type and its reverse-mode graph node.
//!
//! A `Tensor` is an immutable value: shape plus row-major data, shared behind
//! an `Arc`. The only mutable part is the gradient accumulator. Operators that
//! see at least one gradient-tracking operand attach a backward closure, so
//! inference paths build no graph at all.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::shape::volume;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub type TensorId = u64;

/// Gradients for each parent, `None` for parents that do not track gradients.
pub type ParentGrads<E> = Vec<Option<Vec<E>>>;

/// Backward rule attached to a non-leaf node: maps the cotangent of this node
/// to cotangents of its parents. Saved activations live in the closure.
pub(crate) struct BackwardOp<E: Scalar> {
    pub parents: Vec<Tensor<E>>,
    pub backward: Box<dyn Fn(&[E]) -> ParentGrads<E> + Send + Sync>,
}

pub(crate) struct Inner<E: Scalar> {
    pub id: TensorId,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
    pub grad: Mutex<Option<Vec<E>>>,
    pub requires_grad: bool,
    pub op: Option<BackwardOp<E>>,
}

/// Dense N-rank tensor with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor<E: Scalar> {
    pub(crate) inner: Arc<Inner<E>>,
}

impl<E: Scalar> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Scalar> Tensor<E> {
    fn build(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, op: Option<BackwardOp<E>>) -> Self {
        debug_assert_eq!(volume(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: Mutex::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Leaf tensor from raw row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if volume(shape) != data.len() {
            return Err(TensorError::DataLength { expected: volume(shape), got: data.len() });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn scalar(v: E) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![E::ZERO; volume(shape)], false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![E::ONE; volume(shape)], false, None)
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Self::build(shape.to_vec(), vec![v; volume(shape)], false, None)
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![E::ZERO; n * n];
        for i in 0..n {
            data[i * n + i] = E::ONE;
        }
        Self::build(vec![n, n], data, false, None)
    }

    /// Standard-normal samples. Drawn in f64 and cast, so f32 and f64 tensors
    /// built from the same rng stream hold the same values.
    pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Self {
        Self::randn_scaled(shape, E::ONE, rng)
    }

    /// Normal samples with standard deviation `std`.
    pub fn randn_scaled(shape: &[usize], std: E, rng: &mut impl Rng) -> Self {
        let n = volume(shape);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(E::from_f64(crate::tensor::sample_standard_normal(rng)) * std);
        }
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Uniform samples on [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: E, hi: E, rng: &mut impl Rng) -> Self {
        let n = volume(shape);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let u = E::from_f64(rng.gen::<f64>());
            data.push(lo + (hi - lo) * u);
        }
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Non-leaf node produced by an operator; the extension point for fused
    /// ops defined outside this crate. `backward` maps the cotangent of this
    /// node to cotangents of `parents` (element counts must match). The op is
    /// recorded only when a parent tracks gradients; otherwise the result is
    /// a plain leaf.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: Box<dyn Fn(&[E]) -> ParentGrads<E> + Send + Sync>,
    ) -> Self {
        if parents.iter().any(|p| p.tracks_grad()) {
            Self::build(shape, data, false, Some(BackwardOp { parents, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    /// Mark this leaf as a gradient target. Returns a tracking view sharing
    /// nothing with the original (fresh node, copied data).
    pub fn requires_grad(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), true, None)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.clone()
    }

    /// Value of a scalar (rank-0 or single-element) tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.op.is_none()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in gradient computation, either as
    /// a target leaf or as an interior node of a tracked graph.
    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy of the values as a graph-free leaf.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Cast elements to another scalar type (graph-free).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        let data = self.inner.data.iter().map(|v| F::from_f64(v.to_f64())).collect();
        Tensor::build(self.inner.shape.clone(), data, false, None)
    }
}

/// Box-Muller standard normal draw in f64; two uniforms per sample keeps the
/// consumption of the rng stream independent of the element type.
pub fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
