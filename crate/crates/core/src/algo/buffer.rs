//! Storage for one batch of on-policy experience.

use crate::env::DoneReason;
use crate::error::Result;

use super::gae::gae;

/// Per-step records laid out time-major: step `t` of environment `e` lives at
/// index `t * n_envs + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    pub input_dim: usize,
    pub action_dim: usize,
    pub inputs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub done_reasons: Vec<DoneReason>,
    /// `V(s)` of each environment's state after the last recorded step.
    pub last_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, horizon: usize, input_dim: usize, action_dim: usize) -> Self {
        let cap = n_envs * horizon;
        Self {
            n_envs,
            horizon,
            input_dim,
            action_dim,
            inputs: Vec::with_capacity(cap * input_dim),
            actions: Vec::with_capacity(cap * action_dim),
            log_probs: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            done_reasons: Vec::with_capacity(cap),
            last_values: vec![0.0; n_envs],
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        input: &[f64],
        action: &[f64],
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
        reason: DoneReason,
    ) {
        debug_assert_eq!(input.len(), self.input_dim);
        debug_assert_eq!(action.len(), self.action_dim);
        self.inputs.extend_from_slice(input);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.done_reasons.push(reason);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.n_envs * self.horizon
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Advantages and returns, computed per environment and scattered back
    /// into buffer order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let steps = n / self.n_envs.max(1);
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        for e in 0..self.n_envs {
            let idx: Vec<usize> = (0..steps).map(|t| t * self.n_envs + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (a, g) = gae(&r, &v, &d, self.last_values[e], gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                adv[i] = a[k];
                ret[i] = g[k];
            }
        }
        Ok((adv, ret))
    }
}
