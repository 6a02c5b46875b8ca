//! Coefficient vectors in the truncated eigenbasis of `Q`.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{ensure_dim, Result};
use crate::scalar::Real;

/// A state or direction stored as coefficients against the `Q`-eigenbasis.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HVector<S> {
    coeffs: Vec<S>,
}

impl<S: Real> HVector<S> {
    pub fn new(coeffs: Vec<S>) -> Self {
        Self { coeffs }
    }

    pub fn from_f64(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| S::lit(c)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![S::zero(); dim])
    }

    /// The `k`-th unit vector (zero-based).
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coeffs[k] = S::one();
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [S] {
        &mut self.coeffs
    }

    pub fn into_inner(self) -> Vec<S> {
        self.coeffs
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.to_f64_lossy()).collect()
    }

    /// Ambient (X) inner product.
    pub fn dot(&self, other: &Self) -> Result<S> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a * b).sum())
    }

    /// Ambient (X) norm.
    pub fn norm(&self) -> S {
        self.coeffs.iter().map(|&c| c * c).sum::<S>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: S, other: &Self) -> Result<()> {
        ensure_dim(self.dim(), other.dim())?;
        for (s, &o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s = *s + a * o;
        }
        Ok(())
    }

    pub fn scaled(&self, a: S) -> Self {
        Self::new(self.coeffs.iter().map(|&c| a * c).collect())
    }

    /// Componentwise product with a diagonal.
    pub fn hadamard(&self, diag: &[S]) -> Result<Self> {
        ensure_dim(self.dim(), diag.len())?;
        Ok(Self::new(self.coeffs.iter().zip(diag).map(|(&c, &d)| c * d).collect()))
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(Self::new(self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a + b).collect()))
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(Self::new(self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a - b).collect()))
    }

    /// Keeps the first `n` coefficients.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.coeffs[..n.min(self.dim())].to_vec())
    }

    /// Zero-pads (or truncates) to `n` coefficients.
    pub fn resized(&self, n: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.resize(n, S::zero());
        Self::new(c)
    }

    pub fn sup_abs(&self) -> S {
        self.coeffs.iter().fold(S::zero(), |m, c| m.max(c.abs()))
    }
}

impl<S> Index<usize> for HVector<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.coeffs[i]
    }
}

impl<S> IndexMut<usize> for HVector<S> {
    fn index_mut(&mut self, i: usize) -> &mut S {
        &mut self.coeffs[i]
    }
}

impl<S> From<Vec<S>> for HVector<S> {
    fn from(coeffs: Vec<S>) -> Self {
        Self { coeffs }
    }
}

// Operator sugar panics on mismatched dimensions; use the `checked_*` forms
// wherever the operands come from user input.
impl<S: Real> Add for &HVector<S> {
    type Output = HVector<S>;
    fn add(self, rhs: Self) -> HVector<S> {
        self.checked_add(rhs).expect("HVector dimension mismatch")
    }
}

impl<S: Real> Sub for &HVector<S> {
    type Output = HVector<S>;
    fn sub(self, rhs: Self) -> HVector<S> {
        self.checked_sub(rhs).expect("HVector dimension mismatch")
    }
}

impl<S: Real> Mul<S> for &HVector<S> {
    type Output = HVector<S>;
    fn mul(self, rhs: S) -> HVector<S> {
        self.scaled(rhs)
    }
}

impl<S: Real> Mul<S> for HVector<S> {
    type Output = HVector<S>;
    fn mul(mut self, rhs: S) -> HVector<S> {
        for c in &mut self.coeffs {
            *c = *c * rhs;
        }
        self
    }
}

impl<S: Real> Neg for &HVector<S> {
    type Output = HVector<S>;
    fn neg(self) -> HVector<S> {
        self.scaled(-S::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn basic_algebra() {
        let a = HVector::<f64>::from_f64(&[1.0, 2.0]);
        let b = HVector::<f64>::from_f64(&[3.0, -1.0]);
        assert_eq!((&a + &b).coeffs(), &[4.0, 1.0]);
        assert_eq!((&a - &b).coeffs(), &[-2.0, 3.0]);
        assert_eq!(a.dot(&b).unwrap(), 1.0);
        assert!((a.norm() - 5f64.sqrt()).abs() < 1e-15);
        let mut c = a.clone();
        c.axpy(2.0, &b).unwrap();
        assert_eq!(c.coeffs(), &[7.0, 0.0]);
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = HVector::<f64>::zeros(2);
        let b = HVector::<f64>::zeros(3);
        assert_eq!(a.dot(&b), Err(Error::DimMismatch { expected: 2, found: 3 }));
        assert!(a.checked_add(&b).is_err());
    }
}
