//! Dense tensors and the layer kernels of the staining network.
//!
//! Every layer is a pair of free functions (`*_forward`, `*_backward`) that
//! operate on row-major [`Tensor`]s. Images are laid out channel-first
//! (`C×H×W`), convolution weights as `F×C×k×k`, dense weights as `M×N`.
//!
//! The kernels are generic over [`Scalar`]. `f32` runs the blocked SIMD GEMM
//! from `matrixmultiply`; `f64` runs a plain loop that accumulates each output
//! in ascending reduction order, which makes it the reference path for
//! gradient checks and loop-oracle comparisons.

mod activation;
mod conv;
mod dense;
pub mod gradcheck;
mod pool;

pub use activation::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, softmax_cross_entropy_backward,
    softmax_forward, weighted_cross_entropy, Mode, LOG_CLAMP,
};
pub use conv::{conv2d_backward, conv2d_forward};
pub(crate) use conv::conv2d_backward_params;
pub use dense::{dense_backward, dense_forward};
pub use pool::{max_pool2d_backward, max_pool2d_forward, PoolIndices};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Axis, Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;

    /// `c += a · b` for strided matrix views.
    fn gemm_acc(a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: MatMut<'_, Self>);
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    fn gemm_acc(a: MatRef<'_, f32>, b: MatRef<'_, f32>, c: MatMut<'_, f32>) {
        let (m, k, n) = check_gemm(&a, &b, &c);
        // SAFETY: check_gemm verified every strided access is in bounds.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs,
                a.cs,
                b.data.as_ptr(),
                b.rs,
                b.cs,
                1.0,
                c.data.as_mut_ptr(),
                c.rs,
                c.cs,
            );
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    fn gemm_acc(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: MatMut<'_, f64>) {
        let (m, k, n) = check_gemm(&a, &b, &c);
        let (ars, acs) = (a.rs as usize, a.cs as usize);
        let (brs, bcs) = (b.rs as usize, b.cs as usize);
        let (crs, ccs) = (c.rs as usize, c.cs as usize);
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * ars + p * acs];
                for j in 0..n {
                    c.data[i * crs + j * ccs] += av * b.data[p * brs + j * bcs];
                }
            }
        }
    }
}

/// Borrowed strided matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `cols×rows` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: 1,
            cs: rows as isize,
        }
    }
}

/// Mutable strided matrix.
pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn row_major(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        MatMut {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }
}

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

fn check_gemm<T>(a: &MatRef<'_, T>, b: &MatRef<'_, T>, c: &MatMut<'_, T>) -> (usize, usize, usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    for (len, rows, cols, rs, cs) in [
        (a.data.len(), a.rows, a.cols, a.rs, a.cs),
        (b.data.len(), b.rows, b.cols, b.rs, b.cs),
        (c.data.len(), c.rows, c.cols, c.rs, c.cs),
    ] {
        if rows > 0 && cols > 0 {
            assert!(max_offset(rows, cols, rs, cs) < len, "gemm view out of bounds");
        }
    }
    (a.rows, a.cols, b.cols)
}

/// Row-major dense tensor of rank 1 to 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!((1..=4).contains(&shape.len()), "tensor rank must be 1..=4");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if !(1..=4).contains(&shape.len()) {
            return Err(Error::invalid(format!(
                "tensor rank must be 1..=4, got {}",
                shape.len()
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", Axis::Length, expected, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || !(1..=4).contains(&shape.len()) {
            return Err(Error::dim("reshape", Axis::Length, self.data.len(), expected));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn same_shape(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(op, Axis::Rank, 3, self.rank())),
        }
    }

    pub(crate) fn dims1(&self, op: &'static str) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(Error::dim(op, Axis::Rank, 1, self.rank())),
        }
    }
}

/// Gradients produced by a layer's backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub grad_input: Tensor<T>,
    /// One entry per layer parameter, in declaration order (weights, bias).
    pub grad_params: Vec<Tensor<T>>,
}
