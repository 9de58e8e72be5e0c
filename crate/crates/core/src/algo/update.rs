//! PPO and A2C parameter updates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{policy_loss_grad, value_loss_grad, MlpParams, ParamSet, PolicySample, Surrogate, ValueParams};
use crate::rng::Rng;

use super::adam::Adam;
use super::buffer::RolloutBuffer;
use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// Trainable state: both networks, their optimizers, and the minibatch shuffler.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: MlpParams,
    pub value: ValueParams,
    pub opt_policy: Adam,
    pub opt_value: Adam,
    pub shuffle_rng: Rng,
}

fn normalized(adv: &[f64], idx: &[usize]) -> Vec<f64> {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| adv[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (adv[i] - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    idx.iter().map(|&i| (adv[i] - mean) / (sd + 1e-8)).collect()
}

/// Loss and gradients on the rows `idx` of `buf`, with advantages normalized
/// over those rows. The value gradient already carries `value_coef`.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradients(
    policy: &MlpParams,
    value: &ValueParams,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: &[f64],
    idx: &[usize],
    surrogate: Surrogate,
    cfg: &TrainConfig,
) -> (UpdateStats, MlpParams, ValueParams) {
    let norm_adv = normalized(adv, idx);
    let batch: Vec<PolicySample<'_>> = idx
        .iter()
        .zip(&norm_adv)
        .map(|(&i, &a)| PolicySample {
            input: buf.input(i),
            action: buf.action(i),
            old_log_prob: buf.log_probs[i],
            advantage: a,
        })
        .collect();
    let (pstats, gp) = policy_loss_grad(policy, &batch, surrogate, cfg.entropy());
    let inputs: Vec<&[f64]> = idx.iter().map(|&i| buf.input(i)).collect();
    let rets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
    let (vloss, mut gv) = value_loss_grad(value, &inputs, &rets);
    gv.scale(cfg.value_coef);
    let stats = UpdateStats {
        policy_loss: pstats.surrogate,
        value_loss: vloss,
        entropy: pstats.entropy,
        clip_fraction: pstats.clip_fraction,
        approx_kl: pstats.approx_kl,
        grad_norm: (gp.global_norm().powi(2) + gv.global_norm().powi(2)).sqrt(),
    };
    (stats, gp, gv)
}

fn apply(learner: &mut Learner, mut gp: MlpParams, mut gv: ValueParams, stats: &UpdateStats, cfg: &TrainConfig) -> Result<()> {
    let total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy() * stats.entropy;
    if !total.is_finite() || !stats.grad_norm.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            detail: format!(
                "policy_loss={} value_loss={} entropy={} grad_norm={}",
                stats.policy_loss, stats.value_loss, stats.entropy, stats.grad_norm
            ),
        });
    }
    if let Some(max) = cfg.max_grad_norm {
        if stats.grad_norm > max {
            let k = max / stats.grad_norm;
            gp.scale(k);
            gv.scale(k);
        }
    }
    let lr = cfg.lr();
    learner.opt_policy.step(&mut learner.policy, &gp, lr);
    learner.opt_value.step(&mut learner.value, &gv, lr);
    if !learner.policy.all_finite() || !learner.value.all_finite() {
        return Err(Error::NonFinite {
            what: "parameters",
            detail: "optimizer step produced non-finite weights".to_owned(),
        });
    }
    Ok(())
}

/// One gradient step on the whole buffer with the vanilla policy-gradient loss.
pub fn a2c_update(learner: &mut Learner, buf: &RolloutBuffer, cfg: &TrainConfig) -> Result<UpdateStats> {
    let (adv, ret) = buf.advantages(cfg.gamma, cfg.lambda)?;
    let idx: Vec<usize> = (0..buf.len()).collect();
    let (stats, gp, gv) = loss_gradients(&learner.policy, &learner.value, buf, &adv, &ret, &idx, Surrogate::Vanilla, cfg);
    apply(learner, gp, gv, &stats, cfg)?;
    Ok(stats)
}

/// `epochs × minibatches` clipped-surrogate steps over a shuffled buffer.
/// Returned statistics are averaged over all minibatch steps.
pub fn ppo_update(learner: &mut Learner, buf: &RolloutBuffer, cfg: &TrainConfig) -> Result<UpdateStats> {
    let (adv, ret) = buf.advantages(cfg.gamma, cfg.lambda)?;
    let n = buf.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut learner.shuffle_rng);
        for m in 0..cfg.minibatches {
            let lo = m * n / cfg.minibatches;
            let hi = (m + 1) * n / cfg.minibatches;
            let idx = &order[lo..hi];
            let (stats, gp, gv) = loss_gradients(
                &learner.policy,
                &learner.value,
                buf,
                &adv,
                &ret,
                idx,
                Surrogate::Clipped(cfg.clip_ratio),
                cfg,
            );
            apply(learner, gp, gv, &stats, cfg)?;
            acc.policy_loss += stats.policy_loss;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.clip_fraction += stats.clip_fraction;
            acc.approx_kl += stats.approx_kl;
            acc.grad_norm += stats.grad_norm;
            count += 1.0;
        }
    }
    acc.policy_loss /= count;
    acc.value_loss /= count;
    acc.entropy /= count;
    acc.clip_fraction /= count;
    acc.approx_kl /= count;
    acc.grad_norm /= count;
    Ok(acc)
}
