//! Non-learned attribute editing: straight-line traversal along a fixed
//! direction, plus two ways of estimating that direction (centroid difference
//! and a logistic separator).

use crate::env::{BucketSpec, HyperplaneSource};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm_sq, sample_latent, unit_normalize, DirectionVector, LatentVector, TypicalSetSpec};
use crate::oracle::{Oracle, OracleHandle};
use crate::rng::{derive_seed, stream};

/// `s_i = s_base + i·step·k` for `i = 1..=n_steps`.
pub fn linear_traversal(s_base: &[f64], k: &[f64], step_size: f64, n_steps: usize) -> Result<Vec<LatentVector>> {
    if s_base.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: s_base.len(),
            actual: k.len(),
        });
    }
    if n_steps == 0 {
        return Err(Error::Degenerate("linear traversal needs at least one step"));
    }
    (1..=n_steps)
        .map(|i| {
            let alpha = i as f64 * step_size;
            LatentVector::new(s_base.iter().zip(k).map(|(s, kk)| s + alpha * kk).collect())
        })
        .collect()
}

/// First traversal index `i ≥ 1` whose point leaves the typical set, from the
/// closed form `‖s_i‖² = ‖s‖² + 2iα⟨s,k⟩ + i²α²` with `α = step_size`.
///
/// Requires `⟨s,k⟩ ≥ 0`, `step_size > 0`, unit `k`, and a typical start, so
/// that the squared norm increases monotonically and only the outer edge
/// `d + 2ε` can be crossed. Returns `None` when those conditions fail.
pub fn typical_exit_step(s_base: &[f64], k: &[f64], step_size: f64, spec: &TypicalSetSpec) -> Option<usize> {
    let p = dot(s_base, k);
    let n0 = norm_sq(s_base);
    let d = spec.d as f64;
    if p < 0.0 || step_size <= 0.0 || (0.5 * (d - n0).abs()) > spec.epsilon {
        return None;
    }
    // Solve α²i² + 2αp·i − (d + 2ε − n0) = 0 for its positive root.
    let slack = d + 2.0 * spec.epsilon - n0;
    let a = step_size;
    let root = (-p * a + (p * p * a * a + a * a * slack).sqrt()) / (a * a);
    // Points exactly on the edge are still typical, so the exit is the next integer.
    Some(root.floor() as usize + 1)
}

/// `unit_normalize(mean(group_b) − mean(group_a))`.
pub fn centroid_direction(group_a: &[LatentVector], group_b: &[LatentVector]) -> Result<DirectionVector> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Degenerate("centroid direction needs two non-empty groups"));
    }
    let d = group_a[0].dim();
    if group_a.iter().chain(group_b).any(|s| s.dim() != d) {
        return Err(Error::Degenerate("centroid groups mix latent dimensions"));
    }
    let centroid = |g: &[LatentVector]| -> Vec<f64> {
        let mut c = vec![0.0; d];
        for s in g {
            c.iter_mut().zip(s.iter()).for_each(|(ci, si)| *ci += si);
        }
        c.iter_mut().for_each(|ci| *ci /= g.len() as f64);
        c
    };
    let (ca, cb) = (centroid(group_a), centroid(group_b));
    let diff: Vec<f64> = cb.iter().zip(&ca).map(|(b, a)| b - a).collect();
    if diff.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("group centroids coincide"));
    }
    unit_normalize(&diff)
}

/// Clusters of `cluster` youngest and `cluster` oldest latents among `candidates`
/// seeded draws, ranked by oracle age. Returns `(young, old)`.
pub fn age_clusters(
    oracle: &dyn Oracle,
    d: usize,
    candidates: usize,
    cluster: usize,
    seed: u64,
) -> Result<(Vec<LatentVector>, Vec<LatentVector>)> {
    if 2 * cluster > candidates || cluster == 0 {
        return Err(Error::InvalidConfig(vec![format!(
            "need 2 * cluster ({cluster}) <= candidates ({candidates}) and cluster >= 1"
        )]));
    }
    let base = derive_seed(seed, stream::CENTROID);
    let latents: Vec<LatentVector> = (0..candidates as u64)
        .map(|i| sample_latent(derive_seed(base, i), d))
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = latents.iter().map(|s| s.as_slice()).collect();
    let ages = oracle.ages(&refs)?;
    let mut order: Vec<usize> = (0..candidates).collect();
    order.sort_by(|&i, &j| ages[i].total_cmp(&ages[j]).then(i.cmp(&j)));
    let young = order[..cluster].iter().map(|&i| latents[i].clone()).collect();
    let old = order[candidates - cluster..].iter().map(|&i| latents[i].clone()).collect();
    Ok((young, old))
}

/// Settings for [`fit_hyperplane`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// L2 penalty on the normal (not the bias); keeps separable data from diverging.
    pub l2: f64,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            tol: 1e-6,
            max_iter: 200_000,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Unit normal of a logistic-regression separator (with bias), trained by
/// gradient descent with Armijo backtracking. `labels[i] = true` marks the
/// positive side, so the normal points toward the positive class.
pub fn fit_hyperplane(latents: &[LatentVector], labels: &[bool]) -> Result<DirectionVector> {
    fit_hyperplane_with(latents, labels, FitOptions::default())
}

pub fn fit_hyperplane_with(latents: &[LatentVector], labels: &[bool], opts: FitOptions) -> Result<DirectionVector> {
    if latents.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: latents.len(),
            actual: labels.len(),
        });
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Degenerate("hyperplane fit needs both labels present"));
    }
    let d = latents[0].dim();
    if latents.iter().any(|s| s.dim() != d) {
        return Err(Error::Degenerate("hyperplane fit mixes latent dimensions"));
    }
    if latents.iter().all(|s| s == &latents[0]) {
        return Err(Error::Degenerate("hyperplane fit on identical latents"));
    }
    let n = latents.len() as f64;
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    // params: w (d entries) followed by the bias
    let loss = |p: &[f64]| -> f64 {
        let (w, b) = (&p[..d], p[d]);
        let data: f64 = latents.iter().zip(&ys).map(|(x, y)| softplus(-y * (dot(w, x) + b))).sum();
        data / n + 0.5 * opts.l2 * norm_sq(w)
    };
    let grad = |p: &[f64]| -> Vec<f64> {
        let (w, b) = (&p[..d], p[d]);
        let mut g = vec![0.0; d + 1];
        for (x, y) in latents.iter().zip(&ys) {
            let c = -y * sigmoid(-y * (dot(w, x) + b)) / n;
            g[..d].iter_mut().zip(x.iter()).for_each(|(gi, xi)| *gi += c * xi);
            g[d] += c;
        }
        g[..d].iter_mut().zip(w).for_each(|(gi, wi)| *gi += opts.l2 * wi);
        g
    };

    let mut p = vec![0.0; d + 1];
    let mut f = loss(&p);
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let g = grad(&p);
        let gn2 = norm_sq(&g);
        if gn2.sqrt() <= opts.tol {
            break;
        }
        // Armijo backtracking from a step that is allowed to grow again.
        step *= 2.0;
        loop {
            let cand: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi - step * gi).collect();
            let fc = loss(&cand);
            if fc <= f - 0.5 * step * gn2 {
                p = cand;
                f = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::Degenerate("hyperplane fit line search failed"));
            }
        }
    }
    unit_normalize(&p[..d])
}

/// Turns an environment's hyperplane source into a concrete direction.
///
/// `Fit` labels seeded standard-normal latents by whether their oracle age
/// exceeds the sample median.
pub fn resolve_hyperplane(source: &HyperplaneSource, oracle: &OracleHandle, d: usize) -> Result<DirectionVector> {
    match source {
        HyperplaneSource::Oracle => match oracle.synthetic() {
            Some(s) => Ok(s.hyperplane()),
            None => Err(Error::InvalidConfig(vec![
                "env.hyperplane.source = \"oracle\" requires a synthetic oracle".to_owned(),
            ])),
        },
        HyperplaneSource::Explicit { values } => {
            if values.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: values.len(),
                });
            }
            unit_normalize(values)
        }
        HyperplaneSource::Fit { samples, seed } => {
            let base = derive_seed(*seed, stream::FIT);
            let latents: Vec<LatentVector> = (0..*samples as u64)
                .map(|i| sample_latent(derive_seed(base, i), d))
                .collect::<Result<_>>()?;
            let refs: Vec<&[f64]> = latents.iter().map(|s| s.as_slice()).collect();
            let ages = oracle.ages(&refs)?;
            let mut sorted = ages.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            let labels: Vec<bool> = ages.iter().map(|&a| a > median).collect();
            fit_hyperplane(&latents, &labels)
        }
    }
}

/// Age change per unit step along `k`, measured by central difference at the origin.
pub fn age_slope(oracle: &dyn Oracle, k: &[f64]) -> Result<f64> {
    let plus: Vec<f64> = k.to_vec();
    let minus: Vec<f64> = k.iter().map(|v| -v).collect();
    Ok(0.5 * (oracle.age(&plus)? - oracle.age(&minus)?))
}

/// Default traversal step: `n_steps` steps span the bucket range.
pub fn default_step_size(oracle: &dyn Oracle, k: &[f64], buckets: &BucketSpec, n_steps: usize) -> Result<f64> {
    let slope = age_slope(oracle, k)?.abs();
    if slope == 0.0 || !slope.is_finite() {
        return Err(Error::Degenerate("age does not change along the traversal direction"));
    }
    Ok((buckets.hi - buckets.lo) / (slope * n_steps as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cosine, in_typical_set, project_to_shell};
    use crate::oracle::{SyntheticOracle, SyntheticOracleSpec};
    use crate::rng;

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn traversal_examples() {
        let pts = linear_traversal(&[0.0, 0.0], &[1.0, 0.0], 1.0, 3).unwrap();
        assert_eq!(pts, vec![lv(&[1.0, 0.0]), lv(&[2.0, 0.0]), lv(&[3.0, 0.0])]);
        let still = linear_traversal(&[0.5, -1.0], &[1.0, 0.0], 0.0, 4).unwrap();
        assert!(still.iter().all(|p| p.as_slice() == [0.5, -1.0]));
        assert!(linear_traversal(&[0.0], &[1.0], 1.0, 0).is_err());
    }

    #[test]
    fn exit_step_matches_walk() {
        let mut r = rng::rng_from_seed(17);
        let spec = TypicalSetSpec { d: 16, epsilon: 1.5 };
        let s = project_to_shell(&rng::normal_vec(&mut r, 16), 16).unwrap();
        let mut k = unit_normalize(&rng::normal_vec(&mut r, 16)).unwrap();
        if dot(&s, &k) < 0.0 {
            k = k.negated();
        }
        let i = typical_exit_step(&s, &k, 0.05, &spec).unwrap();
        let pts = linear_traversal(&s, &k, 0.05, i).unwrap();
        assert!(pts[..i - 1].iter().all(|p| in_typical_set(p, &spec).unwrap()));
        assert!(!in_typical_set(&pts[i - 1], &spec).unwrap());
        assert_eq!(typical_exit_step(&s, &k.negated(), 0.05, &spec), None);
    }

    #[test]
    fn centroid_examples() {
        let young = [lv(&[0.0, 0.0]), lv(&[0.0, 2.0])];
        let old = [lv(&[2.0, 0.0]), lv(&[2.0, 2.0])];
        assert_eq!(centroid_direction(&young, &old).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(centroid_direction(&old, &young).unwrap().as_slice(), &[-1.0, 0.0]);
        let shift = |g: &[LatentVector]| g.iter().map(|s| lv(&[s[0] + 5.0, s[1] - 3.0])).collect::<Vec<_>>();
        assert_eq!(centroid_direction(&shift(&young), &shift(&old)).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(centroid_direction(&young, &young).is_err());
        assert!(centroid_direction(&[], &old).is_err());
    }

    #[test]
    fn fit_recovers_direction_and_flips() {
        let d = 8;
        let mut r = rng::rng_from_seed(3);
        let k = unit_normalize(&rng::normal_vec(&mut r, d)).unwrap();
        let xs: Vec<LatentVector> = (0..300).map(|_| lv(&rng::normal_vec(&mut r, d))).collect();
        let ys: Vec<bool> = xs.iter().map(|x| dot(x, &k) > 0.0).collect();
        let h = fit_hyperplane(&xs, &ys).unwrap();
        assert!(cosine(&h, &k) > 0.98);
        let flipped: Vec<bool> = ys.iter().map(|y| !y).collect();
        let hf = fit_hyperplane(&xs, &flipped).unwrap();
        for (a, b) in h.iter().zip(hf.iter()) {
            assert!((a + b).abs() < 1e-9);
        }
        assert!(fit_hyperplane(&xs, &vec![true; 300]).is_err());
        let same = vec![xs[0].clone(); 4];
        assert!(fit_hyperplane(&same, &[true, false, true, false]).is_err());
    }

    #[test]
    fn resolve_sources() {
        let spec = SyntheticOracleSpec::random(6, 4.0, 30.0, 0.75, 1).unwrap();
        let oracle = OracleHandle::Synthetic(SyntheticOracle::new(spec.clone()).unwrap());
        let h = resolve_hyperplane(&HyperplaneSource::Oracle, &oracle, 6).unwrap();
        assert!((cosine(&h, &spec.k_age) - 0.8).abs() < 1e-12);
        let e = resolve_hyperplane(&HyperplaneSource::Explicit { values: vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0] }, &oracle, 6)
            .unwrap();
        assert_eq!(e.as_slice(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let fit = resolve_hyperplane(&HyperplaneSource::Fit { samples: 400, seed: 2 }, &oracle, 6).unwrap();
        assert!(cosine(&fit, &spec.k_age) > 0.97);
        let slope = age_slope(&oracle, &h).unwrap();
        assert!((slope - 3.2).abs() < 1e-12);
    }
}
