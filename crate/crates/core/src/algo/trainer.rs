//! The training loop: collect, update, log.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::env::LatentEnv;
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::policy::{default_input_scale, MlpParams, ValueParams};
use crate::rng::{self, derive_seed, stream};

use super::adam::Adam;
use super::rollout::{EpisodeSummary, StartPool, VecEnv};
use super::update::{a2c_update, ppo_update, Learner, UpdateStats};
use super::{Algo, TrainConfig};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    /// Mean return over the most recent completed episodes (`null` before the first finishes).
    pub mean_return: Option<f64>,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    env: &'a LatentEnv,
    oracle: &'a dyn Oracle,
    learner: Learner,
    vec_env: VecEnv,
    input_scale: f64,
    env_steps: u64,
    updates: u64,
    episodes: u64,
    recent: VecDeque<f64>,
    last_stats: UpdateStats,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, env: &'a LatentEnv, oracle: &'a dyn Oracle) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        let d = env.d();
        if oracle.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: oracle.dim(),
            });
        }
        let seed = cfg.seed;
        let policy = MlpParams::init(d, &mut rng::rng_from_seed(derive_seed(seed, stream::INIT_POLICY)));
        let value = ValueParams::init(d, &mut rng::rng_from_seed(derive_seed(seed, stream::INIT_VALUE)));
        let learner = Learner {
            policy,
            value,
            opt_policy: Adam::new(cfg.adam),
            opt_value: Adam::new(cfg.adam),
            shuffle_rng: rng::rng_from_seed(derive_seed(seed, stream::MINIBATCH)),
        };
        let input_scale = cfg.input_scale.unwrap_or_else(|| default_input_scale(d));
        let pool = StartPool {
            seed: derive_seed(seed, stream::POOL),
            size: cfg.pool_size,
            d,
        };
        let vec_env = VecEnv::new(
            env,
            oracle,
            cfg.n_envs,
            pool,
            cfg.conditioning_switch_every,
            input_scale,
            derive_seed(seed, stream::ENV),
        )?;
        Ok(Self {
            recent: VecDeque::with_capacity(cfg.return_window),
            cfg,
            env,
            oracle,
            learner,
            vec_env,
            input_scale,
            env_steps: 0,
            updates: 0,
            episodes: 0,
            last_stats: UpdateStats::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &MlpParams {
        &self.learner.policy
    }

    pub fn value(&self) -> &ValueParams {
        &self.learner.value
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn last_stats(&self) -> &UpdateStats {
        &self.last_stats
    }

    pub fn vec_env(&self) -> &VecEnv {
        &self.vec_env
    }

    pub fn is_done(&self) -> bool {
        self.env_steps >= self.cfg.total_steps
    }

    /// Mean and population variance of the recent-episode window.
    pub fn return_stats(&self) -> Option<(f64, f64)> {
        if self.recent.is_empty() {
            return None;
        }
        let n = self.recent.len() as f64;
        let mean = self.recent.iter().sum::<f64>() / n;
        let var = self.recent.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var))
    }

    /// Collects one batch, applies one update, and returns the metrics row
    /// together with the episodes that finished during the batch.
    pub fn step(&mut self) -> Result<(MetricsRow, Vec<EpisodeSummary>)> {
        let buf = self
            .vec_env
            .collect(self.env, self.oracle, &self.learner.policy, &self.learner.value, self.cfg.horizon)?;
        self.env_steps += buf.len() as u64;
        let stats = match self.cfg.algo {
            Algo::Ppo => ppo_update(&mut self.learner, &buf, &self.cfg)?,
            Algo::A2c => a2c_update(&mut self.learner, &buf, &self.cfg)?,
        };
        self.updates += 1;
        self.last_stats = stats;
        let finished = self.vec_env.drain_completed();
        for ep in &finished {
            if self.recent.len() == self.cfg.return_window {
                self.recent.pop_front();
            }
            self.recent.push_back(ep.episode_return);
        }
        self.episodes += finished.len() as u64;
        let row = MetricsRow {
            step: self.env_steps,
            episodes: self.episodes,
            mean_return: self.return_stats().map(|(m, _)| m),
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_fraction,
        };
        Ok((row, finished))
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                d: self.env.d(),
                seed: self.cfg.seed,
                train_step: self.env_steps,
                config_hash: config_hash.to_owned(),
                input_scale: self.input_scale,
            },
            policy: self.learner.policy.clone(),
            value: self.learner.value.clone(),
        }
    }
}
