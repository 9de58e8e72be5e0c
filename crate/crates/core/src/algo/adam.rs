//! Adam optimizer over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::policy::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Descends along `grad` with step size `lr`.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grad: &P, lr: f64) {
        let n = params.num_params();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.t = 0;
        }
        self.t = self.t.saturating_add(1);
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut i = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
            for (pj, gj) in p.iter_mut().zip(g) {
                let m = beta1 * self.m[i] + (1.0 - beta1) * gj;
                let v = beta2 * self.v[i] + (1.0 - beta2) * gj * gj;
                self.m[i] = m;
                self.v[i] = v;
                *pj -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                i += 1;
            }
        }
    }
}
