//! Analytic oracle with known ground truth.
//!
//! Age is affine in the projection onto a hidden direction `k_age`; identity
//! features are the projection of the latent onto the orthogonal complement of
//! `k_age`. The "estimated" attribute direction handed to agents is tilted by
//! `gamma` toward a second direction `u ⊥ k_age`, so walking along it leaks
//! into the identity features at rate `gamma / sqrt(1 + gamma²)` per unit.

use super::{FeatureVector, Oracle};
use crate::error::{Error, Result};
use crate::geometry::{dot, unit_normalize, DirectionVector};
use crate::rng;

pub const AGE_MIN: f64 = 0.0;
pub const AGE_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracleSpec {
    pub d: usize,
    pub k_age: DirectionVector,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub u: DirectionVector,
}

impl SyntheticOracleSpec {
    /// Builds a spec from a random orthonormal pair `(k_age, u)` drawn from `seed`.
    pub fn random(d: usize, a: f64, b: f64, gamma: f64, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let mut r = rng::rng_from_seed(rng::derive_seed(seed, rng::stream::ORACLE));
        let k = unit_normalize(&rng::normal_vec(&mut r, d))?;
        let mut v = rng::normal_vec(&mut r, d);
        let p = dot(&v, &k);
        v.iter_mut().zip(k.iter()).for_each(|(x, ki)| *x -= p * ki);
        let u = unit_normalize(&v)?;
        Self::new(d, k, a, b, gamma, u)
    }

    pub fn new(d: usize, k_age: DirectionVector, a: f64, b: f64, gamma: f64, u: DirectionVector) -> Result<Self> {
        let mut errs = Vec::new();
        if k_age.dim() != d || u.dim() != d {
            errs.push(format!("oracle directions must have dimension {d}"));
        } else if dot(&k_age, &u).abs() > 1e-9 {
            errs.push("oracle entangling direction must be orthogonal to the age direction".to_owned());
        }
        if a == 0.0 || !a.is_finite() {
            errs.push("oracle.a must be finite and non-zero".to_owned());
        }
        if !b.is_finite() {
            errs.push("oracle.b must be finite".to_owned());
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            errs.push("oracle.gamma must be >= 0".to_owned());
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        Ok(Self {
            d,
            k_age,
            a,
            b,
            gamma,
            u,
        })
    }
}

/// `unit_normalize(k_age + gamma·u)`, the attribute direction agents are given.
pub fn entangled_hyperplane(spec: &SyntheticOracleSpec) -> DirectionVector {
    if spec.gamma == 0.0 {
        return spec.k_age.clone();
    }
    let v: Vec<f64> = spec
        .k_age
        .iter()
        .zip(spec.u.iter())
        .map(|(k, u)| k + spec.gamma * u)
        .collect();
    unit_normalize(&v).expect("k_age + gamma*u is non-zero for orthonormal k_age, u")
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SyntheticOracleSpec,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self> {
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    pub fn hyperplane(&self) -> DirectionVector {
        entangled_hyperplane(&self.spec)
    }

    /// Unclamped affine age, useful for inverting bucket edges.
    pub fn raw_age(&self, s: &[f64]) -> f64 {
        self.spec.a * dot(&self.spec.k_age, s) + self.spec.b
    }

    fn check(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.spec.d {
            return Err(Error::DimensionMismatch {
                expected: self.spec.d,
                actual: s.len(),
            });
        }
        Ok(())
    }
}

impl Oracle for SyntheticOracle {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn feature_dim(&self) -> usize {
        self.spec.d
    }

    fn age(&self, s: &[f64]) -> Result<f64> {
        self.check(s)?;
        Ok(self.raw_age(s).clamp(AGE_MIN, AGE_MAX))
    }

    fn identity(&self, s: &[f64]) -> Result<FeatureVector> {
        self.check(s)?;
        let p = dot(&self.spec.k_age, s);
        Ok(s.iter().zip(self.spec.k_age.iter()).map(|(x, k)| x - p * k).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cosine, norm, sq_dist};

    fn axis_spec(gamma: f64) -> SyntheticOracleSpec {
        SyntheticOracleSpec::new(4, DirectionVector::axis(4, 0), 4.0, 40.0, gamma, DirectionVector::axis(4, 1)).unwrap()
    }

    #[test]
    fn age_examples() {
        let o = SyntheticOracle::new(axis_spec(0.0)).unwrap();
        assert_eq!(o.age(&[0.0; 4]).unwrap(), 40.0);
        assert_eq!(o.age(&[2.5, 0.0, 0.0, 0.0]).unwrap(), 50.0);
        let s = [0.3, -1.2, 0.7, 2.0];
        let moved: Vec<f64> = s.iter().zip(o.spec().k_age.iter()).map(|(x, k)| x + 1.75 * k).collect();
        assert!((o.age(&moved).unwrap() - o.age(&s).unwrap() - 4.0 * 1.75).abs() < 1e-12);
    }

    #[test]
    fn age_is_clamped() {
        let o = SyntheticOracle::new(axis_spec(0.0)).unwrap();
        assert_eq!(o.age(&[100.0, 0.0, 0.0, 0.0]).unwrap(), AGE_MAX);
        assert_eq!(o.age(&[-100.0, 0.0, 0.0, 0.0]).unwrap(), AGE_MIN);
        assert_eq!(o.raw_age(&[100.0, 0.0, 0.0, 0.0]), 440.0);
    }

    #[test]
    fn identity_examples() {
        let o = SyntheticOracle::new(axis_spec(0.75)).unwrap();
        let s = [0.3, -1.2, 0.7, 2.0];
        let moved: Vec<f64> = s.iter().zip(o.spec().k_age.iter()).map(|(x, k)| x + 3.0 * k).collect();
        assert_eq!(o.identity(&s).unwrap(), o.identity(&moved).unwrap());
        assert_eq!(o.identity(&o.spec().k_age).unwrap(), vec![0.0; 4]);
        assert_eq!(o.identity(&o.spec().u).unwrap(), o.spec().u.to_vec());
        assert!(o.identity(&[0.0; 3]).is_err());
        assert!(o.age(&[0.0; 5]).is_err());
    }

    #[test]
    fn hyperplane_examples() {
        assert_eq!(entangled_hyperplane(&axis_spec(0.0)), DirectionVector::axis(4, 0));
        let spec = SyntheticOracleSpec::random(16, 4.0, 30.0, 0.75, 9).unwrap();
        let h = entangled_hyperplane(&spec);
        assert!((cosine(&h, &spec.k_age) - 0.8).abs() < 1e-12);
        assert!((norm(&h) - 1.0).abs() < 1e-12);
        for gamma in [0.0, 0.1, 1.0, 10.0, 1e3] {
            let mut s = spec.clone();
            s.gamma = gamma;
            let h = entangled_hyperplane(&s);
            assert!((norm(&h) - 1.0).abs() < 1e-12);
            assert!((cosine(&h, &s.k_age) - 1.0 / (1.0 + gamma * gamma).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn entangled_drift_is_analytic() {
        let spec = SyntheticOracleSpec::random(16, 4.0, 30.0, 0.75, 3).unwrap();
        let o = SyntheticOracle::new(spec.clone()).unwrap();
        let h = o.hyperplane();
        let base = o.spec().k_age.iter().map(|k| 2.0 * k).collect::<Vec<_>>();
        for len in [0.5, 1.0, 4.0] {
            let moved: Vec<f64> = base.iter().zip(h.iter()).map(|(x, k)| x + len * k).collect();
            let drift = sq_dist(&o.identity(&moved).unwrap(), &o.identity(&base).unwrap());
            let expected = (len * 0.75 / (1.0f64 + 0.5625).sqrt()).powi(2);
            assert!((drift - expected).abs() < 1e-12, "{drift} vs {expected}");
        }
    }

    #[test]
    fn random_spec_is_orthonormal() {
        let spec = SyntheticOracleSpec::random(32, 4.0, 30.0, 0.75, 1).unwrap();
        assert!(dot(&spec.k_age, &spec.u).abs() < 1e-12);
        assert!((norm(&spec.k_age) - 1.0).abs() < 1e-12);
        assert!((norm(&spec.u) - 1.0).abs() < 1e-12);
        assert_eq!(spec, SyntheticOracleSpec::random(32, 4.0, 30.0, 0.75, 1).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let k = DirectionVector::axis(4, 0);
        assert!(SyntheticOracleSpec::new(4, k.clone(), 0.0, 1.0, 0.0, DirectionVector::axis(4, 1)).is_err());
        assert!(SyntheticOracleSpec::new(4, k.clone(), 1.0, 1.0, 0.0, k.clone()).is_err());
        assert!(SyntheticOracleSpec::new(4, k, 1.0, 1.0, -1.0, DirectionVector::axis(4, 1)).is_err());
    }
}
