//! Dense vector arithmetic plus the distance, similarity and boundary
//! primitives the detectors are built from.

use std::ops::{Index, Neg};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VecError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
}

/// Flat vector over all model parameters.
///
/// Every entry is finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VecError> {
        if values.is_empty() {
            return Err(VecError::EmptyInput);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VecError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "gradient vectors have positive dimension");
        Self(vec![0.0; dim])
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

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, VecError> {
        check_dims(self, other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<(), VecError> {
        check_dims(self, other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self(self.0.iter().map(|v| v * scale).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, VecError> {
        check_dims(self, other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Arithmetic mean of a nonempty set of equal-dimension vectors.
    pub fn mean<'a, I>(vs: I) -> Result<Self, VecError>
    where
        I: IntoIterator<Item = &'a GradientVector>,
    {
        let mut iter = vs.into_iter();
        let first = iter.next().ok_or(VecError::EmptyInput)?;
        let mut acc = first.clone();
        let mut n = 1usize;
        for v in iter {
            acc.add_scaled(1.0, v)?;
            n += 1;
        }
        let inv = 1.0 / n as f64;
        acc.0.iter_mut().for_each(|x| *x *= inv);
        Ok(acc)
    }
}

impl TryFrom<Vec<f64>> for GradientVector {
    type Error = VecError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<GradientVector> for Vec<f64> {
    fn from(v: GradientVector) -> Self {
        v.0
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Neg for GradientVector {
    type Output = GradientVector;

    fn neg(mut self) -> GradientVector {
        self.0.iter_mut().for_each(|v| *v = -*v);
        self
    }
}

fn check_dims(a: &GradientVector, b: &GradientVector) -> Result<(), VecError> {
    if a.dim() != b.dim() {
        return Err(VecError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `Σ weights[i] · vs[i]`; `None` when `vs` is empty.
pub fn weighted_sum<V: AsRef<GradientVector>>(
    vs: &[V],
    weights: &[f64],
) -> Result<Option<GradientVector>, VecError> {
    if vs.len() != weights.len() {
        return Err(VecError::DimensionMismatch {
            expected: vs.len(),
            found: weights.len(),
        });
    }
    let Some(first) = vs.first() else {
        return Ok(None);
    };
    let mut acc = GradientVector::zeros(first.as_ref().dim());
    for (v, &w) in vs.iter().zip(weights) {
        acc.add_scaled(w, v.as_ref())?;
    }
    Ok(Some(acc))
}

/// Cosine similarity, clamped to [-1, 1].
///
/// Negative for obtuse angles, which is what the sign-flip test relies on.
pub fn cosine(a: &GradientVector, b: &GradientVector) -> Result<f64, VecError> {
    check_dims(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(VecError::ZeroVector);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn euclidean(a: &GradientVector, b: &GradientVector) -> Result<f64, VecError> {
    check_dims(a, b)?;
    Ok(squared_distance(&a.0, &b.0).sqrt())
}

/// Scalar median; even counts take the midpoint of the two middle values.
/// Sorts `xs` in place.
pub fn median_in_place(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Coordinate-wise median of a nonempty set of vectors.
pub fn coordinate_median<V>(vs: &[V]) -> Result<GradientVector, VecError>
where
    V: AsRef<GradientVector>,
{
    let first = vs.first().ok_or(VecError::EmptyInput)?.as_ref();
    let dim = first.dim();
    for v in vs {
        if v.as_ref().dim() != dim {
            return Err(VecError::DimensionMismatch {
                expected: dim,
                found: v.as_ref().dim(),
            });
        }
    }
    let mut column = vec![0.0; vs.len()];
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        for (slot, v) in column.iter_mut().zip(vs) {
            *slot = v.as_ref().0[j];
        }
        out.push(median_in_place(&mut column).expect("nonempty"));
    }
    Ok(GradientVector(out))
}

impl AsRef<GradientVector> for GradientVector {
    fn as_ref(&self) -> &GradientVector {
        self
    }
}

/// Midpoint of the widest gap between consecutive sorted values.
///
/// Returns `None` when there are fewer than two values or the widest gap
/// does not exceed `min_gap`.
pub fn gap_boundary(ds: &[f64], min_gap: f64) -> Option<f64> {
    if ds.len() < 2 {
        return None;
    }
    let mut sorted = ds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) =
        sorted
            .windows(2)
            .map(|w| (w[0], w[1]))
            .fold((sorted[0], sorted[0]), |best, (a, b)| {
                // first widest gap wins on ties
                if b - a > best.1 - best.0 {
                    (a, b)
                } else {
                    best
                }
            });
    if hi - lo > min_gap {
        Some(0.5 * (lo + hi))
    } else {
        None
    }
}
