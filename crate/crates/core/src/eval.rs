//! Running methods on held-out bases and scoring the trajectories.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::linear_traversal;
use crate::env::{bucket_of, eligible_buckets, make_goal, signed_hyperplane, ActionVector, Conditioning, EnvConfig, LatentEnv};
use crate::error::{Error, Result};
use crate::geometry::{cosine, in_typical_set, sample_latent, DirectionVector, LatentVector};
use crate::oracle::Oracle;
use crate::policy::{build_input, sample_action, MlpParams};
use crate::rng::{self, derive_seed, stream};
use crate::trajectory::{StepRecord, TrajectoryRecord};

/// Per-episode quality measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction of eligible buckets reached by a typical, identity-admissible
    /// step (1 when nothing is eligible).
    pub bucket_coverage: f64,
    pub eligible: usize,
    pub covered: usize,
    pub identity_cosine_mean: f64,
    pub identity_cosine_min: f64,
    pub identity_sqdist_mean: f64,
    /// Fraction of steps outside the typical set.
    pub typicality_violation_rate: f64,
    pub violated: bool,
    pub episode_return: f64,
    pub steps: usize,
}

/// Scores a trajectory from its latents alone, re-querying the oracle.
///
/// Identity cosine compares each step's identity features to those of the
/// episode start; two zero feature vectors count as identical.
pub fn evaluate_trajectory(traj: &TrajectoryRecord, oracle: &dyn Oracle, env_cfg: &EnvConfig) -> Result<MetricsReport> {
    if traj.steps.is_empty() {
        return Err(Error::Degenerate("cannot evaluate an empty trajectory"));
    }
    let start = traj
        .start
        .as_deref()
        .ok_or(Error::Degenerate("trajectory has no latents (record with --log-latents)"))?;
    let f_base = oracle.identity(start)?;
    let age_base = oracle.age(start)?;
    let count = env_cfg.buckets.count();
    let base_bucket = bucket_of(age_base, &env_cfg.buckets);
    let eligible: BTreeSet<usize> = eligible_buckets(base_bucket, count, traj.conditioning).collect();

    let mut covered = BTreeSet::new();
    let (mut cos_sum, mut cos_min, mut sq_sum, mut atypical) = (0.0, f64::INFINITY, 0.0, 0usize);
    for step in &traj.steps {
        let s = step
            .latent
            .as_deref()
            .ok_or(Error::Degenerate("trajectory has no latents (record with --log-latents)"))?;
        let f = oracle.identity(s)?;
        let c = cosine(&f, &f_base);
        let sq = crate::env::identity_distance(&f, &f_base)?;
        let typical = in_typical_set(s, &env_cfg.typical)?;
        let b = bucket_of(oracle.age(s)?, &env_cfg.buckets);
        if typical && sq <= env_cfg.rewards.p2 && eligible.contains(&b) {
            covered.insert(b);
        }
        cos_sum += c;
        cos_min = cos_min.min(c);
        sq_sum += sq;
        atypical += usize::from(!typical);
    }
    let n = traj.steps.len();
    Ok(MetricsReport {
        bucket_coverage: if eligible.is_empty() {
            1.0
        } else {
            covered.len() as f64 / eligible.len() as f64
        },
        eligible: eligible.len(),
        covered: covered.len(),
        identity_cosine_mean: cos_sum / n as f64,
        identity_cosine_min: cos_min,
        identity_sqdist_mean: sq_sum / n as f64,
        typicality_violation_rate: atypical as f64 / n as f64,
        violated: atypical > 0,
        episode_return: traj.steps.iter().map(|s| s.reward).sum(),
        steps: n,
    })
}

/// How a policy picks actions during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionMode {
    /// The Gaussian mean.
    Mean,
    /// A sample, drawn from the given seed's stream.
    Sample(u64),
}

/// One environment episode driven by `policy` from `s_base`.
#[allow(clippy::too_many_arguments)]
pub fn run_policy_episode(
    env: &LatentEnv,
    oracle: &dyn Oracle,
    policy: &MlpParams,
    input_scale: f64,
    s_base: LatentVector,
    conditioning: Conditioning,
    mode: ActionMode,
    method: &str,
    episode: usize,
) -> Result<TrajectoryRecord> {
    let d = env.d();
    let mut state = env.reset(make_goal(s_base, conditioning), oracle)?;
    let mut rec = start_record(method, episode, &state);
    let mut rng = match mode {
        ActionMode::Sample(seed) => Some(rng::rng_from_seed(seed)),
        ActionMode::Mean => None,
    };
    while !state.done {
        let x = build_input(&state.s_t, &state.goal, input_scale)?;
        let mean = policy.net.forward(&x);
        let raw = match rng.as_mut() {
            Some(r) => sample_action(&mean, &policy.log_std, r).0,
            None => mean,
        };
        let out = env.step(&mut state, &ActionVector::from_raw(&raw, d)?, oracle)?;
        rec.steps.push(StepRecord::from_outcome(state.t, &state.s_t, &out));
        rec.episode_return += out.reward;
        rec.done_reason = out.done_reason;
    }
    Ok(rec)
}

/// Replays `s_0 + i·step·k_g` through the environment until it terminates or
/// `n_steps` points are used, where `k_g` is `k` signed by the conditioning.
#[allow(clippy::too_many_arguments)]
pub fn run_traversal_episode(
    env: &LatentEnv,
    oracle: &dyn Oracle,
    k: &DirectionVector,
    step_size: f64,
    n_steps: usize,
    s_base: LatentVector,
    conditioning: Conditioning,
    method: &str,
    episode: usize,
) -> Result<TrajectoryRecord> {
    let mut state = env.reset(make_goal(s_base, conditioning), oracle)?;
    let mut rec = start_record(method, episode, &state);
    let k_g = signed_hyperplane(k, conditioning);
    let points = linear_traversal(&state.s_t, &k_g, step_size, n_steps)?;
    for p in points {
        if state.done {
            break;
        }
        let out = env.advance(&mut state, p, oracle)?;
        rec.steps.push(StepRecord::from_outcome(state.t, &state.s_t, &out));
        rec.episode_return += out.reward;
        rec.done_reason = out.done_reason;
    }
    Ok(rec)
}

fn start_record(method: &str, episode: usize, state: &crate::env::EpisodeState) -> TrajectoryRecord {
    TrajectoryRecord {
        method: method.to_owned(),
        episode,
        conditioning: state.goal.conditioning,
        start: Some(state.s_t.to_vec()),
        age_base: state.age_base,
        base_bucket: state.base_bucket(),
        steps: Vec::new(),
        done_reason: state.done_reason,
        episode_return: 0.0,
    }
}

/// The held-out base latents for evaluation, drawn from their own stream.
pub fn eval_bases(seed: u64, n: usize, d: usize) -> Result<Vec<LatentVector>> {
    let base = derive_seed(seed, stream::EVAL_BASES);
    (0..n as u64).map(|i| sample_latent(derive_seed(base, i), d)).collect()
}

/// CRC-32 over the bit patterns of every coordinate, as 8 hex digits.
pub fn base_set_hash(bases: &[LatentVector]) -> String {
    let mut h = crc32fast::Hasher::new();
    for b in bases {
        for v in b.iter() {
            h.update(&v.to_bits().to_le_bytes());
        }
    }
    format!("{:08x}", h.finalize())
}

/// A method under comparison.
pub enum Method<'a> {
    Policy {
        name: String,
        params: &'a MlpParams,
        input_scale: f64,
        /// `None` uses the mean action; `Some(seed)` samples.
        sample_seed: Option<u64>,
    },
    Traversal {
        name: String,
        direction: DirectionVector,
        step_size: f64,
        n_steps: usize,
    },
}

impl Method<'_> {
    pub fn name(&self) -> &str {
        match self {
            Method::Policy { name, .. } | Method::Traversal { name, .. } => name,
        }
    }

    pub fn run(
        &self,
        env: &LatentEnv,
        oracle: &dyn Oracle,
        s_base: LatentVector,
        cond: Conditioning,
        episode: usize,
    ) -> Result<TrajectoryRecord> {
        match self {
            Method::Policy {
                name,
                params,
                input_scale,
                sample_seed,
            } => {
                let mode = match sample_seed {
                    None => ActionMode::Mean,
                    Some(s) => ActionMode::Sample(derive_seed(derive_seed(*s, cond as u64), episode as u64)),
                };
                run_policy_episode(env, oracle, params, *input_scale, s_base, cond, mode, name, episode)
            }
            Method::Traversal {
                name,
                direction,
                step_size,
                n_steps,
            } => run_traversal_episode(env, oracle, direction, *step_size, *n_steps, s_base, cond, name, episode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub method: String,
    pub conditioning: Conditioning,
    pub episode: usize,
    pub metrics: MetricsReport,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub conditioning: Conditioning,
    pub episodes: usize,
    pub identity_cosine_mean: f64,
    pub identity_cosine_std: f64,
    pub coverage_mean: f64,
    /// Fraction of episodes with at least one step outside the typical set.
    pub violation_rate: f64,
    pub return_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub episodes: usize,
    pub base_set_hash: String,
    pub rows: Vec<SummaryRow>,
    pub per_episode: Vec<EpisodeResult>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(method: &str, cond: Conditioning, results: &[&MetricsReport]) -> SummaryRow {
    let cos: Vec<f64> = results.iter().map(|m| m.identity_cosine_mean).collect();
    let (cos_mean, cos_std) = mean_std(&cos);
    let n = results.len();
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| results.iter().map(|m| f(m)).sum::<f64>() / n.max(1) as f64;
    SummaryRow {
        method: method.to_owned(),
        conditioning: cond,
        episodes: n,
        identity_cosine_mean: cos_mean,
        identity_cosine_std: cos_std,
        coverage_mean: avg(&|m| m.bucket_coverage),
        violation_rate: avg(&|m| f64::from(u8::from(m.violated))),
        return_mean: avg(&|m| m.episode_return),
    }
}

/// Runs every method on the same `episodes` bases under both conditionings.
/// `on_trajectory` sees each trajectory as it completes.
pub fn compare(
    methods: &[Method<'_>],
    env: &LatentEnv,
    oracle: &dyn Oracle,
    episodes: usize,
    seed: u64,
    mut on_trajectory: impl FnMut(&TrajectoryRecord) -> Result<()>,
) -> Result<CompareReport> {
    if methods.is_empty() {
        return Err(Error::InvalidConfig(vec!["compare needs at least one method".to_owned()]));
    }
    let bases = eval_bases(seed, episodes, env.d())?;
    let mut per_episode = Vec::new();
    for m in methods {
        for cond in [Conditioning::Ascending, Conditioning::Descending] {
            for (i, b) in bases.iter().enumerate() {
                let traj = m.run(env, oracle, b.clone(), cond, i)?;
                on_trajectory(&traj)?;
                per_episode.push(EpisodeResult {
                    method: m.name().to_owned(),
                    conditioning: cond,
                    episode: i,
                    metrics: evaluate_trajectory(&traj, oracle, env.config())?,
                });
            }
        }
    }
    let mut rows = Vec::new();
    for m in methods {
        for cond in [Conditioning::Ascending, Conditioning::Descending] {
            let sel: Vec<&MetricsReport> = per_episode
                .iter()
                .filter(|r| r.method == m.name() && r.conditioning == cond)
                .map(|r| &r.metrics)
                .collect();
            rows.push(summarize(m.name(), cond, &sel));
        }
    }
    Ok(CompareReport {
        seed,
        episodes,
        base_set_hash: base_set_hash(&bases),
        rows,
        per_episode,
    })
}

pub const CSV_HEADER: &str =
    "method,conditioning,identity_cosine_mean,identity_cosine_std,coverage_mean,violation_rate,return_mean";

pub fn to_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.conditioning,
            r.identity_cosine_mean,
            r.identity_cosine_std,
            r.coverage_mean,
            r.violation_rate,
            r.return_mean
        );
    }
    s
}
