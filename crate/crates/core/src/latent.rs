//! Dense n-dimensional arrays holding the sampler state, denoised
//! predictions and epsilons.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense array.
///
/// [`Latent::new`] rejects non-finite data. Arithmetic helpers do not
/// re-check finiteness: extrapolated epsilons may overflow and are screened
/// separately by [`crate::stabilize::validate_epsilon`], and the trajectory
/// runner checks the state after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Latent<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let latent = Self::from_raw(shape, data)?;
        if !latent.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(latent)
    }

    /// Like [`Latent::new`] but allows NaN/Inf elements.
    pub fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// One-element latent, mostly for scalar examples.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// `self + factor * other`
    pub fn add_scaled(&self, other: &Self, factor: T) -> Result<Self> {
        self.zip_map(other, |a, b| a + b * factor)
    }

    /// Weighted sum `sum_k weights[k] * terms[k]`, accumulated in the order
    /// given. All terms must share a shape.
    pub fn linear_combination(terms: &[(&Self, T)]) -> Result<Self> {
        let (first, w0) = terms
            .first()
            .ok_or_else(|| Error::Domain("empty linear combination".into()))?;
        let mut out = first.scale(*w0);
        for (term, w) in &terms[1..] {
            out.ensure_same_shape(term)?;
            for (o, &t) in out.data.iter_mut().zip(&term.data) {
                *o = *o + t * *w;
            }
        }
        Ok(out)
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// Euclidean norm over all elements. Overflow yields `inf`, which the
    /// validation guards treat as non-finite.
    pub fn norm(&self) -> T {
        self.sum_squares().sqrt()
    }

    /// Little-endian `f32` bytes, the raw latent dump format.
    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
            .collect()
    }
}
