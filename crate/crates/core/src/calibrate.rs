//! Identity thresholds for oracles whose feature scale is unknown a priori.
//!
//! P2 is set at a high quantile of the identity drift produced by one random
//! step from a fresh start; P1 keeps the default P1:P2 ratio.

use serde::{Deserialize, Serialize};

use crate::env::{make_goal, ActionVector, Conditioning, EnvConfig, LatentEnv};
use crate::error::{Error, Result};
use crate::geometry::sample_latent;
use crate::oracle::Oracle;
use crate::rng::{self, derive_seed, stream};

/// Ratio of the stock thresholds, 750 / 900.
pub const P1_OVER_P2: f64 = 750.0 / 900.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub p1: f64,
    pub p2: f64,
    pub quantile: f64,
    pub samples: usize,
    /// Drift statistics the thresholds were read from.
    pub drift_mean: f64,
    pub drift_median: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Draws `samples` starts (alternating conditionings), applies one action with
/// standard-normal raw components (the output distribution of a freshly
/// initialized policy), and records the identity distance from the start.
pub fn calibrate_thresholds(
    env_cfg: &EnvConfig,
    env: &LatentEnv,
    oracle: &dyn Oracle,
    samples: usize,
    quantile: f64,
    seed: u64,
) -> Result<Calibration> {
    if samples == 0 {
        return Err(Error::InvalidConfig(vec!["calibration needs at least one sample".to_owned()]));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidConfig(vec![format!("calibration quantile must lie in (0, 1), got {quantile}")]));
    }
    let d = env_cfg.d();
    let base = derive_seed(seed, stream::CALIBRATION);
    let mut act_rng = rng::rng_from_seed(derive_seed(base, u64::MAX));
    let mut drift = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = sample_latent(derive_seed(base, i as u64), d)?;
        let cond = if i % 2 == 0 {
            Conditioning::Ascending
        } else {
            Conditioning::Descending
        };
        let mut state = env.reset(make_goal(s, cond), oracle)?;
        let a = ActionVector::from_raw(&rng::normal_vec(&mut act_rng, d + 2), d)?;
        let out = env.step(&mut state, &a, oracle)?;
        drift.push(out.info.identity_distance);
    }
    drift.sort_by(f64::total_cmp);
    let p2 = quantile_sorted(&drift, quantile);
    if !(p2 > 0.0) {
        return Err(Error::Degenerate("random steps produced no identity drift"));
    }
    Ok(Calibration {
        p1: p2 * P1_OVER_P2,
        p2,
        quantile,
        samples,
        drift_mean: drift.iter().sum::<f64>() / samples as f64,
        drift_median: quantile_sorted(&drift, 0.5),
    })
}
