//! The goal-conditioned latent-traversal MDP.
//!
//! A state is a latent `s_t`; the goal is a base latent plus an ascending or
//! descending conditioning. Each action proposes a step in the plane spanned
//! by the (signed) attribute hyperplane normal and a policy-generated basis
//! vector. The agent is paid for reaching unvisited age buckets in the
//! requested direction while the identity distance to the base stays bounded
//! and the new latent stays inside the typical set.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    in_typical_set, norm, project_to_shell, sq_dist, typicality_score, DirectionVector, LatentVector, TypicalSetSpec,
};
use crate::oracle::{FeatureVector, Oracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Conditioning {
    #[serde(rename = "asc")]
    Ascending,
    #[serde(rename = "dsc")]
    Descending,
}

impl Conditioning {
    pub fn flipped(self) -> Self {
        match self {
            Conditioning::Ascending => Conditioning::Descending,
            Conditioning::Descending => Conditioning::Ascending,
        }
    }

    /// Value repeated across the conditioning vector `C`.
    pub fn code(self) -> f64 {
        match self {
            Conditioning::Ascending => 1.0,
            Conditioning::Descending => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::Ascending => "asc",
            Conditioning::Descending => "dsc",
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Conditioning {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "asc" | "ascending" => Ok(Conditioning::Ascending),
            "dsc" | "desc" | "descending" => Ok(Conditioning::Descending),
            other => Err(format!("unknown order `{other}` (expected asc or dsc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub s_base: LatentVector,
    pub conditioning: Conditioning,
    /// All ones (ascending) or all zeros (descending), length `d`.
    pub c: Vec<f64>,
}

impl Goal {
    pub fn dim(&self) -> usize {
        self.s_base.dim()
    }
}

pub fn make_goal(s_base: LatentVector, conditioning: Conditioning) -> Goal {
    let c = vec![conditioning.code(); s_base.dim()];
    Goal {
        s_base,
        conditioning,
        c,
    }
}

/// `[k_gen, w1, w2]`, a point in `R^{d+2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector {
    pub k_gen: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
}

impl ActionVector {
    /// Splits a raw policy output of length `d + 2`.
    pub fn from_raw(raw: &[f64], d: usize) -> Result<Self> {
        if raw.len() != d + 2 {
            return Err(Error::DimensionMismatch {
                expected: d + 2,
                actual: raw.len(),
            });
        }
        Ok(Self {
            k_gen: raw[..d].to_vec(),
            w1: raw[d],
            w2: raw[d + 1],
        })
    }

    pub fn null(d: usize) -> Self {
        Self {
            k_gen: vec![0.0; d],
            w1: 0.0,
            w2: 0.0,
        }
    }

    pub fn to_raw(&self) -> Vec<f64> {
        let mut v = self.k_gen.clone();
        v.push(self.w1);
        v.push(self.w2);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite() && self.k_gen.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            lo: 20.0,
            hi: 60.0,
            width: 5.0,
        }
    }
}

impl BucketSpec {
    pub fn count(&self) -> usize {
        ((self.hi - self.lo) / self.width).round() as usize
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn validate(&self, errs: &mut Vec<String>) {
        if !(self.width > 0.0) || !(self.hi > self.lo) {
            errs.push("env.buckets requires hi > lo and width > 0".to_owned());
            return;
        }
        let n = (self.hi - self.lo) / self.width;
        if (n - n.round()).abs() > 1e-9 {
            errs.push("env.buckets: (hi - lo) must be divisible by width".to_owned());
        }
    }
}

/// Half-open buckets `[lo + i·B, lo + (i+1)·B)`; ages outside the range clamp
/// into the boundary buckets.
pub fn bucket_of(age: f64, spec: &BucketSpec) -> usize {
    let last = spec.count().saturating_sub(1);
    let idx = ((age - spec.lo) / spec.width).floor();
    if idx.is_nan() || idx < 0.0 {
        0
    } else {
        (idx as usize).min(last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub r: f64,
    pub n: f64,
    pub m: f64,
    /// Soft identity threshold on the squared feature distance.
    pub p1: f64,
    /// Hard identity threshold; exceeding it is a catastrophe.
    pub p2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r: 2.0,
            n: 25.0,
            m: 2.0,
            p1: 750.0,
            p2: 900.0,
        }
    }
}

impl RewardConfig {
    fn validate(&self, errs: &mut Vec<String>) {
        if !(self.p1 > 0.0 && self.p1 < self.p2) {
            errs.push(format!("env.rewards requires 0 < p1 < p2 (got p1={}, p2={})", self.p1, self.p2));
        }
        if !(self.r > 0.0) {
            errs.push("env.rewards.r must be > 0".to_owned());
        }
        if !(self.n > 0.0) {
            errs.push("env.rewards.n must be > 0".to_owned());
        }
        if !(self.m >= 1.0) {
            errs.push("env.rewards.m must be >= 1".to_owned());
        }
    }
}

/// Where the attribute hyperplane normal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperplaneSource {
    /// The synthetic oracle's estimated (entangled) direction.
    Oracle,
    /// A logistic separator fitted on oracle-labelled latents.
    Fit { samples: usize, seed: u64 },
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Smoothing `T` in `[0, 1)`.
    pub smoothing: f64,
    pub max_steps: usize,
    pub typical: TypicalSetSpec,
    pub buckets: BucketSpec,
    pub rewards: RewardConfig,
    pub hyperplane: HyperplaneSource,
    pub shell_project_start: bool,
    pub check_typicality_on_start: bool,
    /// Normalize `k_gen` before the transition and read `w2` as its magnitude.
    pub normalize_k_gen: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.3,
            max_steps: 60,
            typical: TypicalSetSpec { d: 512, epsilon: 3.0 },
            buckets: BucketSpec::default(),
            rewards: RewardConfig::default(),
            hyperplane: HyperplaneSource::Fit { samples: 1000, seed: 0 },
            shell_project_start: true,
            check_typicality_on_start: false,
            normalize_k_gen: false,
        }
    }
}

impl EnvConfig {
    pub fn d(&self) -> usize {
        self.typical.d
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if let Err(e) = self.typical.validate() {
            errs.extend(e);
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            errs.push(format!("env.smoothing must lie in [0, 1) (got {})", self.smoothing));
        }
        if self.max_steps == 0 {
            errs.push("env.max_steps must be >= 1".to_owned());
        }
        self.buckets.validate(&mut errs);
        self.rewards.validate(&mut errs);
        if let HyperplaneSource::Explicit { values } = &self.hyperplane {
            if values.len() != self.typical.d {
                errs.push(format!(
                    "env.hyperplane.values has length {} but d = {}",
                    values.len(),
                    self.typical.d
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

pub fn signed_hyperplane(k_hyp: &DirectionVector, conditioning: Conditioning) -> DirectionVector {
    match conditioning {
        Conditioning::Ascending => k_hyp.clone(),
        Conditioning::Descending => k_hyp.negated(),
    }
}

/// `T·s + (1−T)·(s + w1·k_hyp_g + w2·k_gen)`.
pub fn transition(s: &[f64], a: &ActionVector, k_hyp_g: &[f64], smoothing: f64) -> Result<LatentVector> {
    let d = s.len();
    for len in [a.k_gen.len(), k_hyp_g.len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, actual: len });
        }
    }
    let keep = 1.0 - smoothing;
    let next = s
        .iter()
        .zip(k_hyp_g)
        .zip(&a.k_gen)
        .map(|((&x, &k), &g)| smoothing * x + keep * (x + a.w1 * k + a.w2 * g))
        .collect();
    LatentVector::new(next)
}

/// `M_g`: the new age lies strictly on the requested side of the base age and
/// its bucket has not been visited.
pub fn age_gate(age_t: f64, age_base: f64, bucket: usize, visited: &BTreeSet<usize>, conditioning: Conditioning) -> bool {
    let direction_ok = match conditioning {
        Conditioning::Ascending => age_t > age_base,
        Conditioning::Descending => age_t < age_base,
    };
    direction_ok && !visited.contains(&bucket)
}

/// `I_g`, squared Euclidean distance between identity features.
pub fn identity_distance(f_t: &[f64], f_base: &[f64]) -> Result<f64> {
    if f_t.len() != f_base.len() {
        return Err(Error::DimensionMismatch {
            expected: f_base.len(),
            actual: f_t.len(),
        });
    }
    Ok(sq_dist(f_t, f_base))
}

/// Returns `(reward, terminal)`. Branches are checked in order: catastrophe,
/// soft-bound bonus, hard-bound reward, step penalty.
pub fn reward(identity: f64, gate: bool, typical: bool, cfg: &RewardConfig) -> (f64, bool) {
    if identity > cfg.p2 || !typical {
        (-cfg.n, true)
    } else if identity <= cfg.p1 && gate {
        (cfg.m * cfg.r, false)
    } else if gate {
        (cfg.r, false)
    } else {
        (-1.0, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Running,
    Success,
    CatastropheIdentity,
    CatastropheTypicality,
    Timeout,
}

impl DoneReason {
    pub fn is_catastrophe(self) -> bool {
        matches!(self, DoneReason::CatastropheIdentity | DoneReason::CatastropheTypicality)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub s_t: LatentVector,
    pub t: usize,
    pub visited: BTreeSet<usize>,
    pub age_base: f64,
    pub f_base: FeatureVector,
    pub goal: Goal,
    pub done: bool,
    pub done_reason: DoneReason,
    base_bucket: usize,
}

impl EpisodeState {
    pub fn base_bucket(&self) -> usize {
        self.base_bucket
    }
}

/// Buckets strictly beyond `base_bucket` in the conditioning direction.
pub fn eligible_buckets(base_bucket: usize, count: usize, conditioning: Conditioning) -> std::ops::Range<usize> {
    match conditioning {
        Conditioning::Ascending => (base_bucket + 1).min(count)..count,
        Conditioning::Descending => 0..base_bucket,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub age: f64,
    pub bucket: usize,
    pub identity_distance: f64,
    pub in_typical: bool,
    pub gate: bool,
    pub typicality_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub info: StepInfo,
    pub done: bool,
    pub done_reason: DoneReason,
}

/// Environment configuration resolved against a concrete hyperplane.
#[derive(Debug, Clone)]
pub struct LatentEnv {
    cfg: EnvConfig,
    k_hyp: DirectionVector,
}

impl LatentEnv {
    pub fn new(cfg: EnvConfig, k_hyp: DirectionVector) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        if k_hyp.dim() != cfg.d() {
            return Err(Error::DimensionMismatch {
                expected: cfg.d(),
                actual: k_hyp.dim(),
            });
        }
        Ok(Self { cfg, k_hyp })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn k_hyp(&self) -> &DirectionVector {
        &self.k_hyp
    }

    pub fn d(&self) -> usize {
        self.cfg.d()
    }

    pub fn reset(&self, goal: Goal, oracle: &dyn Oracle) -> Result<EpisodeState> {
        let d = self.d();
        if goal.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: goal.dim(),
            });
        }
        let s0 = if self.cfg.shell_project_start {
            project_to_shell(&goal.s_base, d)?
        } else {
            goal.s_base.clone()
        };
        let age_base = oracle.age(&s0)?;
        let f_base = oracle.identity(&s0)?;
        let base_bucket = bucket_of(age_base, &self.cfg.buckets);
        let mut state = EpisodeState {
            s_t: s0,
            t: 0,
            visited: BTreeSet::from([base_bucket]),
            age_base,
            f_base,
            goal,
            done: false,
            done_reason: DoneReason::Running,
            base_bucket,
        };
        if self.cfg.check_typicality_on_start && !in_typical_set(&state.s_t, &self.cfg.typical)? {
            state.done = true;
            state.done_reason = DoneReason::CatastropheTypicality;
        }
        Ok(state)
    }

    /// The latent reached from `s` under `a`, applying `k_gen` normalization when configured.
    pub fn next_latent(&self, s: &[f64], a: &ActionVector, conditioning: Conditioning) -> Result<LatentVector> {
        let k_hyp_g = signed_hyperplane(&self.k_hyp, conditioning);
        if self.cfg.normalize_k_gen {
            let n = norm(&a.k_gen);
            let scaled = ActionVector {
                k_gen: if n > 0.0 { a.k_gen.iter().map(|x| x / n).collect() } else { a.k_gen.clone() },
                w1: a.w1,
                w2: a.w2,
            };
            transition(s, &scaled, &k_hyp_g, self.cfg.smoothing)
        } else {
            transition(s, a, &k_hyp_g, self.cfg.smoothing)
        }
    }

    pub fn step(&self, state: &mut EpisodeState, a: &ActionVector, oracle: &dyn Oracle) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeFinished("step called on a finished episode"));
        }
        if !a.is_finite() {
            return Err(Error::Degenerate("action has non-finite entries"));
        }
        let next = self.next_latent(&state.s_t, a, state.goal.conditioning)?;
        self.advance(state, next, oracle)
    }

    /// Moves the episode to an externally chosen latent and scores the move
    /// exactly as [`LatentEnv::step`] would. Used to replay fixed traversals.
    pub fn advance(&self, state: &mut EpisodeState, next: LatentVector, oracle: &dyn Oracle) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeFinished("advance called on a finished episode"));
        }
        if next.dim() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: next.dim(),
            });
        }
        let conditioning = state.goal.conditioning;
        let score = typicality_score(&next, &self.cfg.typical)?;
        let in_typical = score <= self.cfg.typical.epsilon;
        let age = oracle.age(&next)?;
        let bucket = bucket_of(age, &self.cfg.buckets);
        let gate = age_gate(age, state.age_base, bucket, &state.visited, conditioning);
        let features = oracle.identity(&next)?;
        let id_dist = identity_distance(&features, &state.f_base)?;
        let (r, terminal) = reward(id_dist, gate, in_typical, &self.cfg.rewards);

        if r > 0.0 {
            state.visited.insert(bucket);
        }
        state.s_t = next;
        state.t += 1;

        let count = self.cfg.buckets.count();
        let reason = if terminal {
            if in_typical {
                DoneReason::CatastropheIdentity
            } else {
                DoneReason::CatastropheTypicality
            }
        } else if eligible_buckets(state.base_bucket, count, conditioning).all(|b| state.visited.contains(&b)) {
            DoneReason::Success
        } else if state.t >= self.cfg.max_steps {
            DoneReason::Timeout
        } else {
            DoneReason::Running
        };
        state.done = reason != DoneReason::Running;
        state.done_reason = reason;

        Ok(StepOutcome {
            reward: r,
            info: StepInfo {
                age,
                bucket,
                identity_distance: id_dist,
                in_typical,
                gate,
                typicality_score: score,
            },
            done: state.done,
            done_reason: reason,
        })
    }

    /// Upper bound on an episode's return: every eligible bucket paid at the soft-bound rate.
    pub fn return_upper_bound(&self, state: &EpisodeState) -> f64 {
        let rw = &self.cfg.rewards;
        let n = eligible_buckets(state.base_bucket, self.cfg.buckets.count(), state.goal.conditioning).len();
        rw.m * rw.r * n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{SyntheticOracle, SyntheticOracleSpec};

    #[test]
    fn goal_construction() {
        let s = LatentVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = make_goal(s.clone(), Conditioning::Ascending);
        assert_eq!(g.c, vec![1.0; 4]);
        assert_eq!(make_goal(s.clone(), Conditioning::Descending).c, vec![0.0; 4]);
        assert_eq!(g.s_base.dim() + g.c.len(), 8);
    }

    #[test]
    fn hyperplane_sign() {
        let e1 = DirectionVector::axis(3, 0);
        assert_eq!(signed_hyperplane(&e1, Conditioning::Ascending), e1);
        assert_eq!(signed_hyperplane(&e1, Conditioning::Descending).as_slice(), &[-1.0, 0.0, 0.0]);
        let twice = signed_hyperplane(&signed_hyperplane(&e1, Conditioning::Descending), Conditioning::Descending);
        assert_eq!(twice, e1);
    }

    #[test]
    fn transition_examples() {
        let s = [1.0, 0.0];
        let k = [0.0, 1.0];
        let a = ActionVector {
            k_gen: vec![0.0, 0.0],
            w1: 1.0,
            w2: 0.0,
        };
        let next = transition(&s, &a, &k, 0.3).unwrap();
        assert!((next[0] - 1.0).abs() < 1e-12);
        assert!((next[1] - 0.7).abs() < 1e-12);

        let null = ActionVector::null(2);
        assert_eq!(transition(&s, &null, &k, 0.3).unwrap().as_slice(), &s);

        let big = ActionVector {
            k_gen: vec![3.0, -2.0],
            w1: 5.0,
            w2: 7.0,
        };
        assert_eq!(transition(&s, &big, &k, 1.0).unwrap().as_slice(), &s);
        assert!(transition(&s, &big, &[1.0], 0.3).is_err());
    }

    #[test]
    fn bucket_examples() {
        let b = BucketSpec::default();
        assert_eq!(b.count(), 8);
        assert_eq!(bucket_of(23.0, &b), 0);
        assert_eq!(bucket_of(59.9, &b), 7);
        assert_eq!(bucket_of(65.0, &b), 7);
        assert_eq!(bucket_of(5.0, &b), 0);
        assert_eq!(bucket_of(25.0, &b), 1);
        assert_eq!(bucket_of(24.999_999, &b), 0);
    }

    #[test]
    fn gate_examples() {
        let mut visited = BTreeSet::from([bucket_of(30.0, &BucketSpec::default())]);
        let b40 = bucket_of(40.0, &BucketSpec::default());
        assert!(age_gate(40.0, 30.0, b40, &visited, Conditioning::Ascending));
        assert!(!age_gate(25.0, 30.0, 1, &visited, Conditioning::Ascending));
        visited.insert(b40);
        assert!(!age_gate(40.0, 30.0, b40, &visited, Conditioning::Ascending));
        // strict inequality on ties
        assert!(!age_gate(30.0, 30.0, 6, &BTreeSet::new(), Conditioning::Ascending));
        assert!(!age_gate(30.0, 30.0, 6, &BTreeSet::new(), Conditioning::Descending));
        assert!(age_gate(22.0, 30.0, 0, &visited, Conditioning::Descending));
    }

    #[test]
    fn identity_distance_examples() {
        assert_eq!(identity_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(identity_distance(&[4.0, 6.0], &[1.0, 2.0]).unwrap(), 25.0);
        assert_eq!(
            identity_distance(&[1.0, 2.0], &[4.0, 6.0]).unwrap(),
            identity_distance(&[4.0, 6.0], &[1.0, 2.0]).unwrap()
        );
        assert!(identity_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(reward(950.0, true, true, &cfg), (-25.0, true));
        assert_eq!(reward(700.0, true, true, &cfg), (4.0, false));
        assert_eq!(reward(800.0, true, true, &cfg), (2.0, false));
        assert_eq!(reward(100.0, false, true, &cfg), (-1.0, false));
        assert_eq!(reward(100.0, true, false, &cfg), (-25.0, true));
        assert_eq!(reward(750.0, true, true, &cfg), (4.0, false));
        assert_eq!(reward(900.0, true, true, &cfg), (2.0, false));
    }

    fn axis_env(max_steps: usize) -> (LatentEnv, SyntheticOracle) {
        let d = 4;
        let spec = SyntheticOracleSpec::new(d, DirectionVector::axis(d, 0), 5.0, 30.0, 0.0, DirectionVector::axis(d, 1))
            .unwrap();
        let cfg = EnvConfig {
            typical: TypicalSetSpec { d, epsilon: 1.5 },
            buckets: BucketSpec {
                lo: 20.0,
                hi: 40.0,
                width: 5.0,
            },
            rewards: RewardConfig {
                p1: 1.0,
                p2: 2.0,
                ..RewardConfig::default()
            },
            max_steps,
            hyperplane: HyperplaneSource::Oracle,
            ..EnvConfig::default()
        };
        (LatentEnv::new(cfg, DirectionVector::axis(d, 0)).unwrap(), SyntheticOracle::new(spec).unwrap())
    }

    #[test]
    fn reset_seeds_base_bucket() {
        let (env, oracle) = axis_env(60);
        let goal = make_goal(LatentVector::new(vec![0.1, 3.0, 0.5, 0.0]).unwrap(), Conditioning::Ascending);
        let mut st = env.reset(goal, &oracle).unwrap();
        assert_eq!(st.visited.len(), 1);
        assert!(typicality_score(&st.s_t, &env.config().typical).unwrap() < 1e-9);
        let s0 = st.s_t.clone();
        env.step(&mut st, &ActionVector::null(4), &oracle).unwrap();
        assert_eq!(st.s_t, s0);
    }

    #[test]
    fn typicality_catastrophe() {
        let (env, oracle) = axis_env(60);
        let goal = make_goal(LatentVector::new(vec![0.0, 2.0, 0.0, 0.0]).unwrap(), Conditioning::Ascending);
        let mut st = env.reset(goal, &oracle).unwrap();
        let a = ActionVector {
            k_gen: vec![0.0, 1.0, 0.0, 0.0],
            w1: 0.0,
            w2: 10.0,
        };
        let out = env.step(&mut st, &a, &oracle).unwrap();
        assert_eq!(out.reward, -25.0);
        assert_eq!(out.done_reason, DoneReason::CatastropheTypicality);
        assert!(env.step(&mut st, &a, &oracle).is_err());
    }

    #[test]
    fn success_after_all_eligible_buckets() {
        // Base age 30 (bucket 2, since age = 30 + 5·s₁), ascending: only bucket 3 is eligible.
        let (env, oracle) = axis_env(60);
        let goal = make_goal(LatentVector::new(vec![0.0, 2.0, 0.0, 0.0]).unwrap(), Conditioning::Ascending);
        let mut st = env.reset(goal, &oracle).unwrap();
        assert_eq!(st.base_bucket(), 2);
        // Rotate to s = (1.2, 1.6, 0, 0): age 36, norm² = 4, identity change (2−1.6)² = 0.16.
        let a = ActionVector {
            k_gen: vec![0.0, -0.4 / 0.7, 0.0, 0.0],
            w1: 1.2 / 0.7,
            w2: 1.0,
        };
        let out = env.step(&mut st, &a, &oracle).unwrap();
        assert_eq!(out.info.bucket, 3);
        assert_eq!(out.reward, 4.0);
        assert_eq!(out.done_reason, DoneReason::Success);
    }

    #[test]
    fn timeout_after_max_steps() {
        let (env, oracle) = axis_env(60);
        let goal = make_goal(LatentVector::new(vec![0.0, 2.0, 0.0, 0.0]).unwrap(), Conditioning::Ascending);
        let mut st = env.reset(goal, &oracle).unwrap();
        let mut total = 0.0;
        let mut last = None;
        while !st.done {
            let out = env.step(&mut st, &ActionVector::null(4), &oracle).unwrap();
            total += out.reward;
            last = Some(out.done_reason);
        }
        assert_eq!(st.t, 60);
        assert_eq!(total, -60.0);
        assert_eq!(last, Some(DoneReason::Timeout));
    }

    #[test]
    fn empty_eligible_set_ends_after_first_step() {
        // Base age 30 + 5·1.8 = 39 sits in the top bucket; ascending has nothing left to visit.
        let (env, oracle) = axis_env(60);
        let goal = make_goal(LatentVector::new(vec![1.8, 0.872_066, 0.0, 0.0]).unwrap(), Conditioning::Ascending);
        let mut st = env.reset(goal, &oracle).unwrap();
        assert_eq!(st.base_bucket(), 3);
        let out = env.step(&mut st, &ActionVector::null(4), &oracle).unwrap();
        assert_eq!(out.reward, -1.0);
        assert_eq!(out.done_reason, DoneReason::Success);
    }

    #[test]
    fn start_typicality_check_flag() {
        let (env, oracle) = axis_env(60);
        let mut cfg = env.config().clone();
        cfg.shell_project_start = false;
        cfg.check_typicality_on_start = true;
        let env = LatentEnv::new(cfg, env.k_hyp().clone()).unwrap();
        let goal = make_goal(LatentVector::new(vec![0.0, 5.0, 0.0, 0.0]).unwrap(), Conditioning::Ascending);
        let st = env.reset(goal, &oracle).unwrap();
        assert!(st.done);
        assert_eq!(st.done_reason, DoneReason::CatastropheTypicality);
    }

    #[test]
    fn config_validation_collects_every_error() {
        let cfg = EnvConfig {
            smoothing: 1.0,
            max_steps: 0,
            rewards: RewardConfig {
                p1: 900.0,
                p2: 750.0,
                ..RewardConfig::default()
            },
            ..EnvConfig::default()
        };
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }
}
