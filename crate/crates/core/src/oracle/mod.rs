//! Semantic oracles: latent → age and latent → identity features.
//!
//! An oracle stands in for the composition generator → image → regressor (for
//! age) and generator → image → feature network (for identity). The MDP only
//! ever consumes those two outputs, so the image itself never crosses this
//! boundary.

mod remote;
mod synthetic;

pub use remote::{Handshake, RemoteOracle, PROTOCOL_VERSION};
pub use synthetic::{entangled_hyperplane, SyntheticOracle, SyntheticOracleSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Identity embedding of one latent.
pub type FeatureVector = Vec<f64>;

pub trait Oracle: Send + Sync {
    /// Latent dimension the oracle accepts.
    fn dim(&self) -> usize;

    fn feature_dim(&self) -> usize;

    fn age(&self, s: &[f64]) -> Result<f64>;

    fn identity(&self, s: &[f64]) -> Result<FeatureVector>;

    fn ages(&self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        batch.iter().map(|s| self.age(s)).collect()
    }

    fn identities(&self, batch: &[&[f64]]) -> Result<Vec<FeatureVector>> {
        batch.iter().map(|s| self.identity(s)).collect()
    }
}

/// How to build an oracle, as stored in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleDescriptor {
    Synthetic {
        /// Years per unit displacement along the age direction.
        a: f64,
        /// Age at the origin.
        b: f64,
        gamma: f64,
        /// Seed for the random orthonormal pair (age direction, entangling direction).
        direction_seed: u64,
    },
    Remote {
        endpoint: String,
        timeout_ms: u64,
    },
}

/// A constructed oracle. Exactly one backing implementation.
pub enum OracleHandle {
    Synthetic(SyntheticOracle),
    Remote(RemoteOracle),
}

impl OracleHandle {
    pub fn from_descriptor(desc: &OracleDescriptor, d: usize) -> Result<Self> {
        match desc {
            OracleDescriptor::Synthetic {
                a,
                b,
                gamma,
                direction_seed,
            } => {
                let spec = SyntheticOracleSpec::random(d, *a, *b, *gamma, *direction_seed)?;
                Ok(OracleHandle::Synthetic(SyntheticOracle::new(spec)?))
            }
            OracleDescriptor::Remote {
                endpoint,
                timeout_ms,
            } => {
                let remote = RemoteOracle::connect(endpoint, std::time::Duration::from_millis(*timeout_ms))?;
                if remote.dim() != d {
                    return Err(crate::Error::DimensionMismatch {
                        expected: d,
                        actual: remote.dim(),
                    });
                }
                Ok(OracleHandle::Remote(remote))
            }
        }
    }

    pub fn synthetic(&self) -> Option<&SyntheticOracle> {
        match self {
            OracleHandle::Synthetic(s) => Some(s),
            OracleHandle::Remote(_) => None,
        }
    }

    fn inner(&self) -> &dyn Oracle {
        match self {
            OracleHandle::Synthetic(s) => s,
            OracleHandle::Remote(r) => r,
        }
    }
}

impl Oracle for OracleHandle {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn feature_dim(&self) -> usize {
        self.inner().feature_dim()
    }
    fn age(&self, s: &[f64]) -> Result<f64> {
        self.inner().age(s)
    }
    fn identity(&self, s: &[f64]) -> Result<FeatureVector> {
        self.inner().identity(s)
    }
    fn ages(&self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        self.inner().ages(batch)
    }
    fn identities(&self, batch: &[&[f64]]) -> Result<Vec<FeatureVector>> {
        self.inner().identities(batch)
    }
}
