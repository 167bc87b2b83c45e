//! Dense row-major tensors, the op kernels the detection blocks need, a
//! reverse-mode tape over those kernels, and a finite-difference checker.

pub mod gradcheck;
pub mod kernels;
pub mod rmkt;
pub mod tape;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub use kernels::{Conv2dParams, Direction, PoolParams};
pub use tape::{Gradients, Tape, Var};

/// Dense tensor with row-major storage. 4-D data uses (batch, channels,
/// height, width) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(shape_err!("tensor needs at least one dimension"));
        }
        if dims.contains(&0) {
            return Err(shape_err!("zero extent in dims {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), vec![value; n])
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), (0..n).map(&mut f).collect())
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(dims, |_| T::lit(rng.gen_range(lo..hi)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// (batch, channels, height, width) of a 4-D tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.dims[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err!("expected 4-D tensor, got dims {:?}", self.dims)),
        }
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = self.dims4().expect("at4 on non-4-D tensor");
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "elementwise dims mismatch: {:?} vs {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let d = self.zip_map(other, |a, b| (a - b).abs())?;
        Ok(d.data.iter().copied().fold(T::zero(), T::max))
    }

    /// Converts element type, e.g. a 64-bit oracle result to 32-bit.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Channel range `[start, start + len)` of a 4-D tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        kernels::slice_channels(self, start, len)
    }
}
