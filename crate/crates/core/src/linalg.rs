//! Dense 64-bit vector arithmetic.
//!
//! Every similarity in the engine goes through [`cosine`]. Accumulation is
//! strictly sequential (index ascending) so results are bit-reproducible.

use std::ops::Deref;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("vector must have at least one component")]
    Empty,
    #[error("non-finite value {value} at component {index}")]
    NonFinite { index: usize, value: f64 },
}

/// A finite, non-empty vector of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, LinalgError> {
        if values.is_empty() {
            return Err(LinalgError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index, value });
        }
        Ok(Vector(values))
    }

    /// Wraps values produced from finite parameters.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Vector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), LinalgError> {
    if a.len() != b.len() {
        return Err(LinalgError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Σ aᵢ·bᵢ, accumulated left to right.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64, LinalgError> {
    check_dims(a, b)?;
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Cosine similarity.
///
/// Each argument is divided by its own norm before the products are formed,
/// so `cosine(a, b)` and `cosine(b, a)` are bit-identical.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, LinalgError> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(LinalgError::ZeroNorm);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// Cosine with precomputed norms. Produces the same bits as [`cosine`].
pub(crate) fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x / na) * (y / nb);
    }
    acc
}

/// Returns `a / ‖a‖`.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = norm(a);
    if n == 0.0 {
        return Err(LinalgError::ZeroNorm);
    }
    Ok(a.iter().map(|x| x / n).collect())
}
