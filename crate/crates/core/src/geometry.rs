//! Latent-space primitives and the Gaussian typical set.
//!
//! Latents live in `R^d` under a standard normal prior. Almost all of the
//! prior's mass sits in a thin shell of radius `sqrt(d)`; the `(eps, 1)`
//! typical set used here is the annulus `½·|d − ‖s‖²| ≤ eps`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity with the zero-vector rule: two zero vectors are
/// identical (1), a single zero vector is orthogonal to everything (0).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot(a, b) / (na * nb)).clamp(-1.0, 1.0),
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// A point in the latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("latent has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    /// `self + alpha * dir`.
    pub fn offset(&self, alpha: f64, dir: &[f64]) -> Self {
        debug_assert_eq!(self.dim(), dir.len());
        Self(self.0.iter().zip(dir).map(|(s, k)| s + alpha * k).collect())
    }
}

impl Deref for LatentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A unit-norm direction in the latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirectionVector(Vec<f64>);

impl DirectionVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// Basis vector `e_i` in `R^d`.
    pub fn axis(d: usize, i: usize) -> Self {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Self(v)
    }
}

impl Deref for DirectionVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DirectionVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        unit_normalize(&v)
    }
}

impl From<DirectionVector> for Vec<f64> {
    fn from(v: DirectionVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypicalSetSpec {
    pub d: usize,
    pub epsilon: f64,
}

impl TypicalSetSpec {
    pub fn new(d: usize, epsilon: f64) -> Result<Self> {
        let spec = Self { d, epsilon };
        spec.validate().map_err(Error::InvalidConfig)?;
        Ok(spec)
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.d == 0 {
            errs.push("typical.d must be >= 1".to_owned());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errs.push("typical.epsilon must be > 0".to_owned());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Draws `s ~ N(0, I_d)` from the ChaCha8 stream seeded by `seed`.
pub fn sample_latent(seed: u64, d: usize) -> Result<LatentVector> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    let mut rng = rng::rng_from_seed(seed);
    Ok(LatentVector(rng::normal_vec(&mut rng, d)))
}

/// `½·|d − ‖s‖²|`, the distance from the typical shell in nats.
pub fn typicality_score(s: &[f64], spec: &TypicalSetSpec) -> Result<f64> {
    check_dim(spec.d, s.len())?;
    Ok(0.5 * (spec.d as f64 - norm_sq(s)).abs())
}

/// Membership in the `(eps, 1)` typical set; the boundary is inclusive.
pub fn in_typical_set(s: &[f64], spec: &TypicalSetSpec) -> Result<bool> {
    Ok(typicality_score(s, spec)? <= spec.epsilon)
}

/// Radially rescales `s` onto the sphere of radius `sqrt(d)`.
pub fn project_to_shell(s: &[f64], d: usize) -> Result<LatentVector> {
    check_dim(d, s.len())?;
    let n = norm(s);
    if n == 0.0 {
        return Err(Error::Degenerate("cannot project the zero vector onto the shell"));
    }
    let k = (d as f64).sqrt() / n;
    Ok(LatentVector(s.iter().map(|v| v * k).collect()))
}

pub fn unit_normalize(v: &[f64]) -> Result<DirectionVector> {
    if v.is_empty() {
        return Err(Error::InvalidDimension(0));
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero or non-finite vector"));
    }
    Ok(DirectionVector(v.iter().map(|x| x / n).collect()))
}
