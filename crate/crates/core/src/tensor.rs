//! Dense row-major tensors.
//!
//! Image tensors use the batch × channels × height × width layout throughout.
//! Values are generic over [`Element`]: `f64` for gradient checks and
//! oracles, `f32` for the training path.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point scalar a [`Tensor`] can hold.
pub trait Element:
    Float + LinalgScalar + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape(shape, "rank must be at least 1"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(shape, "extents must be >= 1"));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape(
                shape,
                format!("holds {n} elements but {} values were given", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// A one-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn ones_like(other: &Self) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::one(); other.data.len()],
            requires_grad: false,
            grad: None,
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Extents of a rank-4 tensor as `[n, c, h, w]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(&self.shape, "expected rank 4 (N, C, H, W)")),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::mismatch("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Compensated (Neumaier) sum of all elements.
    pub fn sum(&self) -> T {
        let (mut s, mut c) = (T::zero(), T::zero());
        for &v in &self.data {
            let t = s + v;
            c = c + if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
            s = t;
        }
        s + c
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::mismatch("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Self::from_vec(&shape, data)
    }
}

/// `c = op(a) · op(b) + beta · c` for row-major slices, where `op(a)` is
/// `m × k` and `op(b)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Element>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}
