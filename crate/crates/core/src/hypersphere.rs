//! Vector geometry on the unit hypersphere.
//!
//! Everything the classifier needs to compare embeddings with class
//! prototypes: L2 normalisation, cosine similarity and the additive angular
//! margin `cos(θ + m)` together with its derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Cosines are kept this far away from ±1 whenever `sin θ` is needed.
pub const COS_CLAMP: f64 = 1e-9;

/// A vector with Euclidean norm 1 (within floating point error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `values` without normalising. Callers must guarantee unit norm.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        UnitVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length.
pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    let n = norm(v);
    if n.is_nan() || n <= NORM_EPS {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Normalises `v` in place, returning the norm it had before.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n.is_nan() || n <= NORM_EPS {
        return Err(Error::DegenerateVector { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

/// Cosine of the angle between two unit vectors (their dot product, unclamped).
pub fn cosine(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(&a.0, &b.0))
}

/// Clamps a cosine into `[-1 + COS_CLAMP, 1 - COS_CLAMP]`.
pub fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

fn guard_threshold(m: f64) -> f64 {
    // cos(π − m)
    -m.cos()
}

/// `cos(θ + m)` for `cos_theta = cos θ`.
///
/// Past `θ = π − m` the true `cos(θ + m)` starts increasing again, so the
/// value switches to the linear continuation `cos θ − m·sin m`, which keeps
/// the function non-increasing in θ over the whole `[0, π]`.
pub fn margin_cosine(cos_theta: f64, m: f64) -> f64 {
    if m == 0.0 {
        return cos_theta;
    }
    let c = clamp_cos(cos_theta);
    if c < guard_threshold(m) {
        cos_theta - m * m.sin()
    } else {
        let sin_theta = (1.0 - c * c).sqrt();
        c * m.cos() - sin_theta * m.sin()
    }
}

/// Derivative of [`margin_cosine`] with respect to `cos_theta`.
pub fn margin_cosine_grad(cos_theta: f64, m: f64) -> f64 {
    if m == 0.0 {
        return 1.0;
    }
    let c = clamp_cos(cos_theta);
    if c < guard_threshold(m) {
        1.0
    } else {
        let sin_theta = (1.0 - c * c).sqrt();
        m.cos() + c * m.sin() / sin_theta
    }
}
