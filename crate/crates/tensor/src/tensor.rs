use std::fmt;

use crate::error::{Result, TensorError};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Dense row-major array with shape metadata.
///
/// A rank-0 tensor (empty shape) is a scalar holding exactly one element.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::ShapeData {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Standard normal draws.
    pub fn randn(shape: impl Into<Vec<usize>>, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| T::of(rng.normal()))
    }

    /// Uniform draws on `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| T::of(lo + (hi - lo) * rng.uniform()))
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

    pub fn size_bytes(&self) -> usize {
        self.data.len() * T::DTYPE.size_of()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if expected != self.data.len() {
            return Err(TensorError::ShapeData {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Interprets the tensor as `[C, H, W]`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                got: self.shape.len(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_same_shape(op, &self.shape, &other.shape)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure_same_shape("add_assign", &self.shape, &other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    /// Copies channel range `[start, start + len)` of a `[C, ...]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let c = *self.shape.first().ok_or(TensorError::Rank {
            op: "slice_channels",
            expected: 1,
            got: 0,
        })?;
        if start + len > c {
            return Err(TensorError::Dimension {
                op: "slice_channels",
                axis: 0,
                expected: c,
                got: start + len,
            });
        }
        let plane = self.data.len() / c.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        })
    }

    /// Order-sensitive 64-bit hash of shape and exact element bits (FNV-1a).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for &d in &self.shape {
            feed(d as u64);
        }
        for &x in &self.data {
            feed(x.bits());
        }
        h
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Rank {
            op,
            expected: a.len(),
            got: b.len(),
        });
    }
    for (axis, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(TensorError::Dimension {
                op,
                axis,
                expected: x,
                got: y,
            });
        }
    }
    Ok(())
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
