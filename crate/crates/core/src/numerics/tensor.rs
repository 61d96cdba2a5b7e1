use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{Float, FromPrimitive};

use super::NumericsError;

/// Element dtype tag carried by every [`Scalar`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Floating-point element usable in tensors and on the gradient tape.
pub trait Scalar:
    Float + FromPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Lossy conversion from an `f64` literal.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
}

/// Dense row-major array. Immutable once built; every operation returns a new value.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Clone> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, NumericsError> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumericsError::InvalidShape { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Result<Self, NumericsError> {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Product of every axis but the last.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self, NumericsError> {
        Self::new(shape, self.data.clone())
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Element at a 2-D index `(row, col)` of the `[rows, cols]` view.
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c].clone()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self, NumericsError> {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self, NumericsError> {
        Self::filled(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn eye(n: usize) -> Result<Self, NumericsError> {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::new([n, n], data)
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self, NumericsError> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T, NumericsError> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(NumericsError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T, NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::shape_mismatch(
                "max_abs_diff",
                &self.shape,
                &other.shape,
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }
}
