//! Synchronous vectorized environments and rollout collection.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{make_goal, ActionVector, Conditioning, DoneReason, EpisodeState, LatentEnv};
use crate::error::{Error, Result};
use crate::geometry::{sample_latent, LatentVector};
use crate::oracle::Oracle;
use crate::policy::{build_input, sample_action, MlpParams, ValueParams};
use crate::rng::{self, derive_seed, Rng};

use super::buffer::RolloutBuffer;

/// Start-state pool. Entry `i` is `sample_latent(derive_seed(seed, i), d)`,
/// regenerated on demand so the pool costs no memory at large `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartPool {
    pub seed: u64,
    pub size: usize,
    pub d: usize,
}

impl StartPool {
    pub fn get(&self, i: usize) -> Result<LatentVector> {
        sample_latent(derive_seed(self.seed, i as u64), self.d)
    }
}

/// Conditioning of episode `k` (0-based) for environment `env_index`:
/// even environments start ascending, odd ones descending, and each flips
/// after every `switch_every` episodes.
pub fn conditioning_for_episode(env_index: usize, k: u64, switch_every: u64) -> Conditioning {
    let start = if env_index.is_multiple_of(2) {
        Conditioning::Ascending
    } else {
        Conditioning::Descending
    };
    if (k / switch_every) % 2 == 1 {
        start.flipped()
    } else {
        start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub env: usize,
    pub pool_index: usize,
    pub conditioning: Conditioning,
    pub episode_return: f64,
    pub length: usize,
    pub done_reason: DoneReason,
}

struct Slot {
    state: EpisodeState,
    rng: Rng,
    episodes_started: u64,
    pool_index: usize,
    ret: f64,
}

pub struct VecEnv {
    pool: StartPool,
    switch_every: u64,
    input_scale: f64,
    slots: Vec<Slot>,
    pool_draws: u64,
    /// Episodes finished since the last [`VecEnv::drain_completed`].
    completed: Vec<EpisodeSummary>,
}

impl VecEnv {
    pub fn new(
        env: &LatentEnv,
        oracle: &dyn Oracle,
        n_envs: usize,
        pool: StartPool,
        switch_every: u64,
        input_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut v = Self {
            pool,
            switch_every,
            input_scale,
            slots: Vec::with_capacity(n_envs),
            pool_draws: 0,
            completed: Vec::new(),
        };
        for e in 0..n_envs {
            let mut rng = rng::rng_from_seed(derive_seed(seed, e as u64));
            let (state, pool_index) = v.start_episode(env, oracle, e, 0, &mut rng)?;
            v.slots.push(Slot {
                state,
                rng,
                episodes_started: 1,
                pool_index,
                ret: 0.0,
            });
        }
        Ok(v)
    }

    fn start_episode(
        &mut self,
        env: &LatentEnv,
        oracle: &dyn Oracle,
        e: usize,
        k: u64,
        rng: &mut Rng,
    ) -> Result<(EpisodeState, usize)> {
        let cond = conditioning_for_episode(e, k, self.switch_every);
        loop {
            let idx = rng.random_range(0..self.pool.size);
            self.pool_draws += 1;
            let state = env.reset(make_goal(self.pool.get(idx)?, cond), oracle)?;
            // Only possible with check_typicality_on_start: redraw an atypical start.
            if !state.done {
                return Ok((state, idx));
            }
        }
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn pool_draws(&self) -> u64 {
        self.pool_draws
    }

    pub fn episodes_started(&self) -> u64 {
        self.slots.iter().map(|s| s.episodes_started).sum()
    }

    pub fn state(&self, e: usize) -> &EpisodeState {
        &self.slots[e].state
    }

    pub fn drain_completed(&mut self) -> Vec<EpisodeSummary> {
        std::mem::take(&mut self.completed)
    }

    /// Runs `horizon` steps in every environment with a stochastic policy.
    pub fn collect(
        &mut self,
        env: &LatentEnv,
        oracle: &dyn Oracle,
        policy: &MlpParams,
        value: &ValueParams,
        horizon: usize,
    ) -> Result<RolloutBuffer> {
        let d = env.d();
        let mut buf = RolloutBuffer::new(self.slots.len(), horizon, 3 * d, d + 2);
        for _ in 0..horizon {
            for e in 0..self.slots.len() {
                let slot = &mut self.slots[e];
                let x = build_input(&slot.state.s_t, &slot.state.goal, self.input_scale)?;
                let mean = policy.net.forward(&x);
                let (raw, lp) = sample_action(&mean, &policy.log_std, &mut slot.rng);
                if !lp.is_finite() || raw.iter().any(|a| !a.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "sampled action",
                        detail: format!("env {e}, t {}", slot.state.t),
                    });
                }
                let v = value.value(&x);
                let action = ActionVector::from_raw(&raw, d)?;
                let out = env.step(&mut slot.state, &action, oracle)?;
                slot.ret += out.reward;
                buf.push(&x, &raw, lp, out.reward, v, out.done, out.done_reason);
                if out.done {
                    self.completed.push(EpisodeSummary {
                        env: e,
                        pool_index: slot.pool_index,
                        conditioning: slot.state.goal.conditioning,
                        episode_return: slot.ret,
                        length: slot.state.t,
                        done_reason: out.done_reason,
                    });
                    let k = slot.episodes_started;
                    let mut rng = slot.rng.clone();
                    let (state, idx) = self.start_episode(env, oracle, e, k, &mut rng)?;
                    let slot = &mut self.slots[e];
                    slot.rng = rng;
                    slot.state = state;
                    slot.pool_index = idx;
                    slot.episodes_started += 1;
                    slot.ret = 0.0;
                }
            }
        }
        for (e, slot) in self.slots.iter().enumerate() {
            let x = build_input(&slot.state.s_t, &slot.state.goal, self.input_scale)?;
            buf.last_values[e] = value.value(&x);
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BucketSpec, EnvConfig, HyperplaneSource, RewardConfig};
    use crate::geometry::TypicalSetSpec;
    use crate::oracle::{SyntheticOracle, SyntheticOracleSpec};
    use crate::policy::{default_input_scale, log_prob};

    fn setup(rewards: RewardConfig) -> (LatentEnv, SyntheticOracle) {
        let d = 4;
        let spec = SyntheticOracleSpec::random(d, 4.0, 30.0, 0.5, 3).unwrap();
        let cfg = EnvConfig {
            typical: TypicalSetSpec { d, epsilon: 1.5 },
            buckets: BucketSpec {
                lo: 20.0,
                hi: 40.0,
                width: 5.0,
            },
            rewards,
            hyperplane: HyperplaneSource::Oracle,
            max_steps: 10,
            ..EnvConfig::default()
        };
        let oracle = SyntheticOracle::new(spec).unwrap();
        let env = LatentEnv::new(cfg, oracle.hyperplane().clone()).unwrap();
        (env, oracle)
    }

    fn rescore(policy: &MlpParams, x: &[f64], raw: &[f64]) -> f64 {
        log_prob(&policy.net.forward(x), &policy.log_std, raw)
    }

    fn nets(d: usize) -> (MlpParams, ValueParams) {
        let mut r = rng::rng_from_seed(1);
        (MlpParams::init(d, &mut r), ValueParams::init(d, &mut r))
    }

    #[test]
    fn buffer_length_is_horizon_times_envs() {
        let (env, oracle) = setup(RewardConfig {
            p1: 1.0,
            p2: 2.0,
            ..RewardConfig::default()
        });
        let pool = StartPool { seed: 9, size: 50, d: 4 };
        let mut v = VecEnv::new(&env, &oracle, 4, pool, 100, default_input_scale(4), 5).unwrap();
        let (p, val) = nets(4);
        let buf = v.collect(&env, &oracle, &p, &val, 8).unwrap();
        assert_eq!(buf.len(), 32);
        assert!(buf.is_full());
        assert_eq!(buf.inputs.len(), 32 * 12);
        // stored log-probs re-score exactly
        for i in 0..buf.len() {
            assert_eq!(rescore(&p, buf.input(i), buf.action(i)), buf.log_probs[i]);
        }
        assert_eq!(v.pool_draws(), v.episodes_started());
    }

    #[test]
    fn always_catastrophic_env() {
        // p2 below any achievable drift with log_std = 3: every step ends in catastrophe
        let (env, oracle) = setup(RewardConfig {
            p1: 1e-300,
            p2: 2e-300,
            ..RewardConfig::default()
        });
        let pool = StartPool { seed: 1, size: 10, d: 4 };
        let mut v = VecEnv::new(&env, &oracle, 3, pool, 100, 0.5, 2).unwrap();
        let (mut p, val) = nets(4);
        p.log_std = vec![3.0; 6];
        let buf = v.collect(&env, &oracle, &p, &val, 6).unwrap();
        assert!(buf.rewards.iter().all(|&r| r == -25.0));
        assert!(buf.dones.iter().all(|&d| d));
        let done = v.drain_completed();
        assert_eq!(done.len(), 18);
        assert_eq!(v.episodes_started(), 21);
        assert_eq!(v.pool_draws(), 21);
    }

    #[test]
    fn conditioning_flips_on_boundaries() {
        assert_eq!(conditioning_for_episode(0, 0, 100), Conditioning::Ascending);
        assert_eq!(conditioning_for_episode(0, 99, 100), Conditioning::Ascending);
        assert_eq!(conditioning_for_episode(0, 100, 100), Conditioning::Descending);
        assert_eq!(conditioning_for_episode(0, 199, 100), Conditioning::Descending);
        assert_eq!(conditioning_for_episode(0, 200, 100), Conditioning::Ascending);
        assert_eq!(conditioning_for_episode(1, 0, 100), Conditioning::Descending);
        assert_eq!(conditioning_for_episode(1, 100, 100), Conditioning::Ascending);
    }

    #[test]
    fn episodes_follow_the_switch_schedule() {
        let (env, oracle) = setup(RewardConfig {
            p1: 1e-300,
            p2: 2e-300,
            ..RewardConfig::default()
        });
        let pool = StartPool { seed: 1, size: 10, d: 4 };
        let mut v = VecEnv::new(&env, &oracle, 2, pool, 3, 0.5, 2).unwrap();
        let (mut p, val) = nets(4);
        p.log_std = vec![3.0; 6];
        v.collect(&env, &oracle, &p, &val, 7).unwrap();
        let done = v.drain_completed();
        for e in 0..2 {
            let conds: Vec<_> = done.iter().filter(|s| s.env == e).map(|s| s.conditioning).collect();
            let want: Vec<_> = (0..7).map(|k| conditioning_for_episode(e, k, 3)).collect();
            assert_eq!(conds, want);
        }
    }
}
