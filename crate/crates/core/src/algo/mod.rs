//! On-policy training: rollouts, advantage estimation, and the PPO and A2C updates.

mod adam;
mod buffer;
mod gae;
mod rollout;
mod trainer;
mod update;

pub use adam::{Adam, AdamConfig};
pub use buffer::RolloutBuffer;
pub use gae::gae;
pub use rollout::{conditioning_for_episode, EpisodeSummary, StartPool, VecEnv};
pub use trainer::{MetricsRow, Trainer};
pub use update::{a2c_update, loss_gradients, ppo_update, Learner, UpdateStats};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    A2c,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Ppo => "ppo",
            Algo::A2c => "a2c",
        })
    }
}

impl std::str::FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "a2c" => Ok(Algo::A2c),
            other => Err(format!("unknown algorithm `{other}` (expected ppo or a2c)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    /// Environment steps summed over all parallel environments.
    pub total_steps: u64,
    pub horizon: usize,
    pub n_envs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_ratio: f64,
    /// `None` picks the algorithm default (3e-4 PPO, 7e-4 A2C).
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    /// `None` picks the algorithm default (0 PPO, 0.01 A2C).
    pub entropy_coef: Option<f64>,
    /// Global gradient-norm clip over policy and value gradients; `None` disables it.
    pub max_grad_norm: Option<f64>,
    pub adam: AdamConfig,
    pub pool_size: usize,
    pub conditioning_switch_every: u64,
    pub seed: u64,
    /// Updates between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Policy input scale; `None` means `1/sqrt(d)`.
    pub input_scale: Option<f64>,
    /// Completed episodes averaged into `mean_return`.
    pub return_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppo,
            total_steps: 1_000_000,
            horizon: 128,
            n_envs: 8,
            gamma: 0.99,
            lambda: 0.95,
            clip_ratio: 0.2,
            learning_rate: None,
            epochs: 4,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: None,
            max_grad_norm: Some(0.5),
            adam: AdamConfig::default(),
            pool_size: 60_000,
            conditioning_switch_every: 100,
            seed: 0,
            checkpoint_every: 50,
            input_scale: None,
            return_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.algo {
            Algo::Ppo => 3e-4,
            Algo::A2c => 7e-4,
        })
    }

    pub fn entropy(&self) -> f64 {
        self.entropy_coef.unwrap_or(match self.algo {
            Algo::Ppo => 0.0,
            Algo::A2c => 0.01,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.horizon * self.n_envs
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push(format!("train.gamma must lie in (0, 1] (got {})", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("train.lambda must lie in [0, 1] (got {})", self.lambda));
        }
        if !(self.clip_ratio > 0.0) {
            errs.push("train.clip_ratio must be > 0".to_owned());
        }
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            errs.push("train.learning_rate must be > 0".to_owned());
        }
        if !(self.entropy() >= 0.0) {
            errs.push("train.entropy_coef must be >= 0".to_owned());
        }
        if !(self.value_coef >= 0.0) {
            errs.push("train.value_coef must be >= 0".to_owned());
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            errs.push("train.max_grad_norm must be > 0 when set".to_owned());
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("n_envs", self.n_envs),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("pool_size", self.pool_size),
            ("return_window", self.return_window),
        ] {
            if v == 0 {
                errs.push(format!("train.{name} must be >= 1"));
            }
        }
        if self.minibatches > self.batch_size() {
            errs.push("train.minibatches exceeds horizon * n_envs".to_owned());
        }
        if self.conditioning_switch_every == 0 {
            errs.push("train.conditioning_switch_every must be >= 1".to_owned());
        }
        if matches!(self.input_scale, Some(s) if !(s > 0.0)) {
            errs.push("train.input_scale must be > 0 when set".to_owned());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}
