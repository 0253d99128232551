//! Flat parameter vectors and labeled examples.
//!
//! All model state lives in a single dense `ParamVector`; gradients share the
//! same layout, so the optimizer arithmetic never needs shape information.

use crate::error::{Error, Result};

/// Dense f64 vector holding every parameter of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Validating constructor: dimension at least one, every entry finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ShapeMismatch("parameter vector must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite entry {bad}")));
        }
        Ok(ParamVector { values })
    }

    /// Internal constructor for arithmetic results; finiteness of outputs is
    /// the caller's concern (the round loop scans for it).
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, factor: f64) -> Self {
        ParamVector::from_raw(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        ParamVector::from_raw(
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }

    /// `self - step * other`, the SGD update shape.
    pub fn sub_scaled(&self, step: f64, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim());
        ParamVector::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - step * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.sub_scaled(1.0, other)
    }

    /// Largest relative coordinate gap against `other`, with an absolute
    /// floor so zero coordinates compare sanely.
    pub fn max_relative_gap(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }
}

/// One labeled training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Example { features, label }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rejects_non_finite_entries() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
        assert!(ParamVector::new(vec![0.0]).is_ok());
    }

    #[test]
    fn norm_and_arithmetic() {
        let v = ParamVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(v.l2_norm(), 5.0);
        let w = v.sub_scaled(0.5, &ParamVector::new(vec![2.0, 2.0]).unwrap());
        assert_eq!(w.values(), &[2.0, 3.0]);
        let s = v.scale(2.0);
        assert_eq!(s.values(), &[6.0, 8.0]);
    }

    #[test]
    fn relative_gap_is_zero_for_identical_vectors() {
        let v = ParamVector::new(vec![1.0, -2.0, 0.0]).unwrap();
        assert_eq!(v.max_relative_gap(&v), 0.0);
    }
}
