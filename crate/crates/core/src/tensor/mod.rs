//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are immutable, reference-counted nodes of a computation graph.
//! Every operation that touches a tensor with `requires_grad` records a
//! backward closure and its parents; [`Tensor::backward`] walks the graph in
//! reverse topological order and returns the accumulated [`Gradients`].
//!
//! The element type is generic over [`Real`] so the same model code runs in
//! 32-bit for training and in 64-bit for finite-difference verification.

mod autograd;
pub mod checkpoint;
mod gemm;
pub mod gradcheck;
mod ops;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{dim_err, Result};

pub use autograd::Gradients;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

/// Floating-point element type of a tensor.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const NAME: &'static str;

    /// `c = a · b + beta · c` over strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for `c`)
    /// regions of the stated extents.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule: given the output gradient and which parents need a
/// gradient, return one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Real> {
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional array with optional gradient tracking.
pub struct Tensor<T: Real = f32> {
    node: Arc<Node<T>>,
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
        let preview: Vec<T> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("dtype", &T::NAME)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn from_parts(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
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

    /// A constant (non-tracked) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel(shape),
                data.len()
            ));
        }
        Ok(Self::from_parts(Arc::new(data), shape.to_vec(), false, None))
    }

    /// A leaf tensor that receives a gradient on backward.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requiring_grad())
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&x| T::from_f64_lossy(x)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(
            Arc::new(vec![T::zero(); numel(shape)]),
            shape.to_vec(),
            false,
            None,
        )
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(
            Arc::new(vec![value; numel(shape)]),
            shape.to_vec(),
            false,
            None,
        )
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    /// A leaf copy of this tensor's values that tracks gradients.
    pub fn requiring_grad(&self) -> Self {
        Self::from_parts(Arc::clone(&self.node.data), self.node.shape.clone(), true, None)
    }

    /// A constant copy, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(Arc::clone(&self.node.data), self.node.shape.clone(), false, None)
    }

    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Self::from_parts(Arc::new(data), shape, requires_grad, grad_fn)
    }

    /// Output sharing this tensor's storage under a new shape.
    pub(crate) fn share_with_shape(
        &self,
        shape: Vec<usize>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let grad_fn = self.requires_grad().then(|| GradFn {
            parents: vec![self.clone()],
            backward: Box::new(backward),
        });
        Self::from_parts(
            Arc::clone(&self.node.data),
            shape,
            self.requires_grad(),
            grad_fn,
        )
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
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
        self.data().iter().map(|x| x.as_f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<T>> {
        self.node.grad_fn.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(dim_err!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.data()[0])
    }

    /// Convert to another precision as a new constant tensor.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|x| U::from_f64_lossy(x.as_f64()))
            .collect();
        Tensor::new(data, self.shape()).expect("shape preserved")
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests;
