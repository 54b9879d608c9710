//! Dense row-major tensors.
//!
//! Images and feature maps use the `[batch, channels, height, width]` layout.
//! Storage is reference counted so that cloning a tensor (for instance when a
//! parameter is placed on a tape) never copies the data; mutation goes through
//! [`Tensor::data_mut`], which copies on write.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        validate_shape("tensor", shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                shape,
                alloc::format!("holds {} elements but data has {}", expected, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Panics on an invalid shape; for internal use where the shape is known good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(shape.iter().all(|&d| d >= 1));
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        validate_shape("tensor", shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        validate_shape("tensor", shape)?;
        let n: usize = shape.iter().product();
        Ok(Tensor::from_parts(shape.to_vec(), (0..n).map(&mut f).collect()))
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    /// Dimensions of a rank-4 `[B, C, H, W]` tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::invalid_shape(op, &self.shape, "expected [batch, channels, height, width]")),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        validate_shape("reshape", shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// One `[H, W]` plane of a `[B, C, H, W]` tensor.
    pub fn plane(&self, b: usize, c: usize) -> Result<&[T]> {
        let [nb, nc, h, w] = self.dims4("plane")?;
        if b >= nb || c >= nc {
            return Err(Error::invalid_shape("plane", &self.shape, "plane index out of range"));
        }
        let start = (b * nc + c) * h * w;
        Ok(&self.data[start..start + h * w])
    }

    /// Batch slice `[1, C, H, W]` at index `b`.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let [nb, c, h, w] = self.dims4("batch_item")?;
        if b >= nb {
            return Err(Error::invalid_shape("batch_item", &self.shape, "batch index out of range"));
        }
        let n = c * h * w;
        Ok(Tensor::from_parts(vec![1, c, h, w], self.data[b * n..(b + 1) * n].to_vec()))
    }
}

pub(crate) fn validate_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::invalid_shape(op, shape, "rank must be at least 1"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid_shape(op, shape, "all dimensions must be >= 1"));
    }
    Ok(())
}
