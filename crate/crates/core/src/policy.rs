//! Goal-conditioned Gaussian policy and value function.
//!
//! Both are two-hidden-layer tanh MLPs (64 units each) over the input
//! `[scale·s_t, scale·s_base, C]`. The policy has a linear head producing the
//! action mean in `R^{d+2}` and a state-independent `log_std`. Gradients are
//! computed by hand-written reverse mode in f64.


use serde::{Deserialize, Serialize};

use crate::env::Goal;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const HIDDEN: usize = 64;

/// `½·ln(2πe)`, the entropy of a unit normal.
pub const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Fully connected layer, `y = W·x + b` with `W` stored row-major (`rows = out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(rows, cols);
        layer.w = orthogonal_matrix(rows, cols, rng);
        layer.w.iter_mut().for_each(|v| *v *= gain);
        layer
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and returns `dL/dx`.
    #[allow(clippy::needless_range_loop)]
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, want_dx: bool) -> Vec<f64> {
        let mut dx = if want_dx { vec![0.0; self.cols] } else { Vec::new() };
        for r in 0..self.rows {
            let g = dy[r];
            if g == 0.0 {
                continue;
            }
            grad.b[r] += g;
            let grow = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += g * xi;
            }
            if want_dx {
                let row = &self.w[r * self.cols..(r + 1) * self.cols];
                for (d, wi) in dx.iter_mut().zip(row) {
                    *d += g * wi;
                }
            }
        }
        dx
    }
}

/// Orthogonal `rows × cols` matrix via modified Gram–Schmidt on a Gaussian draw.
fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    // Orthonormalize `k = min(rows, cols)` vectors of length `n = max(rows, cols)`.
    let (n, k) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while vecs.len() < k {
        let mut v = rng::normal_vec(rng, n);
        for q in &vecs {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        vecs.push(v);
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // rows >= cols: columns are orthonormal; otherwise rows are.
            w[r * cols + c] = if rows >= cols { vecs[c][r] } else { vecs[r][c] };
        }
    }
    w
}

/// `input → tanh(64) → tanh(64) → linear(out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Dense,
    pub l2: Dense,
    pub out: Dense,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub y: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            l1: Dense::zeros(HIDDEN, input),
            l2: Dense::zeros(HIDDEN, HIDDEN),
            out: Dense::zeros(output, HIDDEN),
        }
    }

    pub fn init(input: usize, output: usize, head_gain: f64, rng: &mut Rng) -> Self {
        let g = std::f64::consts::SQRT_2;
        Self {
            l1: Dense::orthogonal(HIDDEN, input, g, rng),
            l2: Dense::orthogonal(HIDDEN, HIDDEN, g, rng),
            out: Dense::orthogonal(output, HIDDEN, head_gain, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.cols
    }

    pub fn output_dim(&self) -> usize {
        self.out.rows
    }

    pub fn trace(&self, x: &[f64]) -> MlpTrace {
        let mut h1 = Vec::with_capacity(HIDDEN);
        self.l1.forward_into(x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(HIDDEN);
        self.l2.forward_into(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = Vec::with_capacity(self.out.rows);
        self.out.forward_into(&h2, &mut y);
        MlpTrace { h1, h2, y }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).y
    }

    /// Accumulates parameter gradients of `dL/dy` into `grad`.
    pub fn backward(&self, x: &[f64], tr: &MlpTrace, dy: &[f64], grad: &mut Mlp) {
        let mut d2 = self.out.backward(&tr.h2, dy, &mut grad.out, true);
        d2.iter_mut().zip(&tr.h2).for_each(|(g, h)| *g *= 1.0 - h * h);
        let mut d1 = self.l2.backward(&tr.h1, &d2, &mut grad.l2, true);
        d1.iter_mut().zip(&tr.h1).for_each(|(g, h)| *g *= 1.0 - h * h);
        self.l1.backward(x, &d1, &mut grad.l1, false);
    }

    fn zeros_like(&self) -> Self {
        Self {
            l1: Dense::zeros(self.l1.rows, self.l1.cols),
            l2: Dense::zeros(self.l2.rows, self.l2.cols),
            out: Dense::zeros(self.out.rows, self.out.cols),
        }
    }

    fn slices(&self) -> [&[f64]; 6] {
        [&self.l1.w, &self.l1.b, &self.l2.w, &self.l2.b, &self.out.w, &self.out.b]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.l1.w,
            &mut self.l1.b,
            &mut self.l2.w,
            &mut self.l2.b,
            &mut self.out.w,
            &mut self.out.b,
        ]
    }
}

/// Flat views over every parameter tensor, in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.slices().to_vec()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut().into_iter().collect()
    }
}

/// Policy network plus the state-independent action log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            net: Mlp::zeros(3 * d, d + 2),
            log_std: vec![0.0; d + 2],
        }
    }

    /// Orthogonal init, hidden gain √2, head gain 0.01, zero log-std.
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        Self {
            net: Mlp::init(3 * d, d + 2, 0.01, rng),
            log_std: vec![0.0; d + 2],
        }
    }

    pub fn d(&self) -> usize {
        self.log_std.len() - 2
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
            log_std: vec![0.0; self.log_std.len()],
        }
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.net.tensors();
        v.push(&self.log_std);
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.tensors_mut();
        v.push(&mut self.log_std);
        v
    }
}

/// Critic with the same trunk and a scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub net: Mlp,
}

impl ValueParams {
    pub fn zeros(d: usize) -> Self {
        Self { net: Mlp::zeros(3 * d, 1) }
    }

    pub fn init(d: usize, rng: &mut Rng) -> Self {
        Self {
            net: Mlp::init(3 * d, 1, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.net.forward(x)[0]
    }
}

impl ParamSet for ValueParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

/// Default input normalization: `1/sqrt(d)` maps shell-scale latents to unit scale.
pub fn default_input_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// `[scale·s_t, scale·s_base, C]`.
pub fn build_input(s_t: &[f64], goal: &Goal, scale: f64) -> Result<Vec<f64>> {
    let d = goal.dim();
    if s_t.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: s_t.len(),
        });
    }
    let mut x = Vec::with_capacity(3 * d);
    x.extend(s_t.iter().map(|v| v * scale));
    x.extend(goal.s_base.iter().map(|v| v * scale));
    x.extend_from_slice(&goal.c);
    Ok(x)
}

pub fn forward_policy(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.net.input_dim(),
            actual: x.len(),
        });
    }
    Ok(params.net.forward(x))
}

/// Diagonal Gaussian log-density.
pub fn log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + HALF_LN_2PI_E).sum()
}

/// Draws `a = mean + exp(log_std) ⊙ z` and returns it with its log-density.
pub fn sample_action(mean: &[f64], log_std: &[f64], rng: &mut Rng) -> (Vec<f64>, f64) {
    let a: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| m + ls.exp() * rng::standard_normal(rng))
        .collect();
    let lp = log_prob(mean, log_std, &a);
    (a, lp)
}

/// One transition as seen by the policy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample<'a> {
    pub input: &'a [f64],
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyLossStats {
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Which policy objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// `−mean(log π(a|x) · Â)`.
    Vanilla,
    /// `−mean(min(ρ·Â, clip(ρ, 1−c, 1+c)·Â))` with `ρ = exp(log π − log π_old)`.
    Clipped(f64),
}

/// Loss `surrogate − entropy_coef · H` and its exact gradient.
pub fn policy_loss_grad(
    params: &MlpParams,
    batch: &[PolicySample<'_>],
    surrogate: Surrogate,
    entropy_coef: f64,
) -> (PolicyLossStats, MlpParams) {
    let mut grad = params.zeros_like();
    let n = batch.len().max(1) as f64;
    let inv_std: Vec<f64> = params.log_std.iter().map(|ls| (-ls).exp()).collect();
    let mut stats = PolicyLossStats::default();
    let mut clipped = 0usize;

    for s in batch {
        let tr = params.net.trace(s.input);
        let mean = &tr.y;
        let lp = log_prob(mean, &params.log_std, s.action);
        // dL/dlogπ for this sample
        let coef = match surrogate {
            Surrogate::Vanilla => {
                stats.surrogate -= lp * s.advantage / n;
                -s.advantage / n
            }
            Surrogate::Clipped(c) => {
                let ratio = (lp - s.old_log_prob).exp();
                let unclipped = ratio * s.advantage;
                let clipped_ratio = ratio.clamp(1.0 - c, 1.0 + c);
                let clipped_obj = clipped_ratio * s.advantage;
                if (ratio - 1.0).abs() > c {
                    clipped += 1;
                }
                stats.approx_kl += (s.old_log_prob - lp) / n;
                if unclipped <= clipped_obj {
                    stats.surrogate -= unclipped / n;
                    -s.advantage * ratio / n
                } else {
                    stats.surrogate -= clipped_obj / n;
                    0.0
                }
            }
        };
        if coef == 0.0 {
            continue;
        }
        let mut dmean = Vec::with_capacity(mean.len());
        for i in 0..mean.len() {
            let z = (s.action[i] - mean[i]) * inv_std[i];
            // ∂logπ/∂μ = z/σ, ∂logπ/∂logσ = z² − 1
            dmean.push(coef * z * inv_std[i]);
            grad.log_std[i] += coef * (z * z - 1.0);
        }
        params.net.backward(s.input, &tr, &dmean, &mut grad.net);
    }

    stats.entropy = entropy(&params.log_std);
    grad.log_std.iter_mut().for_each(|g| *g -= entropy_coef);
    stats.loss = stats.surrogate - entropy_coef * stats.entropy;
    stats.clip_fraction = clipped as f64 / n;
    (stats, grad)
}

/// `mean((V(x) − R)²)` and its gradient.
pub fn value_loss_grad(params: &ValueParams, inputs: &[&[f64]], returns: &[f64]) -> (f64, ValueParams) {
    let mut grad = params.zeros_like();
    let n = inputs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &ret) in inputs.iter().zip(returns) {
        let tr = params.net.trace(x);
        let err = tr.y[0] - ret;
        loss += err * err / n;
        params.net.backward(x, &tr, &[2.0 * err / n], &mut grad.net);
    }
    (loss, grad)
}

/// Gradient of the entropy w.r.t. `log_std` (all ones).
pub fn entropy_grad(log_std: &[f64]) -> Vec<f64> {
    vec![1.0; log_std.len()]
}

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn numeric_gradient<P: ParamSet + Clone>(params: &P, h: f64, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.num_params());
    let shape: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, len) in shape.into_iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors_mut()[ti][j];
            probe.tensors_mut()[ti][j] = orig + h;
            let up = f(&probe);
            probe.tensors_mut()[ti][j] = orig - h;
            let down = f(&probe);
            probe.tensors_mut()[ti][j] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = crate::geometry::norm(a).max(crate::geometry::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
