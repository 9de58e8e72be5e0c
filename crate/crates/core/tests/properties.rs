//! Property tests for the invariants of each module.

use std::collections::BTreeSet;

use proptest::prelude::*;

use latent_steer::algo::gae;
use latent_steer::baselines::{centroid_direction, linear_traversal};
use latent_steer::env::{
    bucket_of, make_goal, reward, transition, ActionVector, BucketSpec, Conditioning, DoneReason, EnvConfig,
    HyperplaneSource, LatentEnv, RewardConfig,
};
use latent_steer::eval::{evaluate_trajectory, run_policy_episode, ActionMode};
use latent_steer::geometry::{
    dot, in_typical_set, norm_sq, project_to_shell, typicality_score, unit_normalize, LatentVector, TypicalSetSpec,
};
use latent_steer::oracle::{Oracle, SyntheticOracle, SyntheticOracleSpec};
use latent_steer::policy::{build_input, forward_policy, MlpParams};
use latent_steer::rng;

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn nonzero(d: usize) -> impl Strategy<Value = Vec<f64>> {
    vec_of(d).prop_filter("non-zero", |v| norm_sq(v) > 1e-6)
}

/// Brute-force GAE straight from the definition: Â_t = Σ_l (γλ)^l δ_{t+l},
/// truncated at the first terminal.
fn gae_brute(r: &[f64], v: &[f64], done: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
    let t_len = r.len();
    (0..t_len)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..t_len {
                let next = if done[k] {
                    0.0
                } else if k + 1 < t_len {
                    v[k + 1]
                } else {
                    last
                };
                acc += w * (r[k] + g * next - v[k]);
                if done[k] {
                    break;
                }
                w *= g * l;
            }
            acc
        })
        .collect()
}

fn desk_env(gamma: f64, seed: u64) -> (LatentEnv, SyntheticOracle) {
    let d = 8;
    let oracle = SyntheticOracle::new(SyntheticOracleSpec::random(d, 4.0, 30.0, gamma, seed).unwrap()).unwrap();
    let cfg = EnvConfig {
        typical: TypicalSetSpec { d, epsilon: 1.5 },
        buckets: BucketSpec {
            lo: 20.0,
            hi: 40.0,
            width: 5.0,
        },
        rewards: RewardConfig {
            p1: 1.0,
            p2: 1.2,
            ..RewardConfig::default()
        },
        max_steps: 20,
        hyperplane: HyperplaneSource::Oracle,
        normalize_k_gen: true,
        ..EnvConfig::default()
    };
    let env = LatentEnv::new(cfg, oracle.hyperplane()).unwrap();
    (env, oracle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn typicality_ignores_permutation_and_signs(s in vec_of(12), perm_seed in any::<u64>(), flips in prop::collection::vec(any::<bool>(), 12)) {
        let spec = TypicalSetSpec { d: 12, epsilon: 1.0 };
        let mut idx: Vec<usize> = (0..12).collect();
        let mut r = rng::rng_from_seed(perm_seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut r);
        let t: Vec<f64> = idx.iter().zip(&flips).map(|(&i, &f)| if f { -s[i] } else { s[i] }).collect();
        let a = typicality_score(&s, &spec).unwrap();
        let b = typicality_score(&t, &spec).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn shell_projection_is_always_typical(s in nonzero(10), eps in 1e-9f64..5.0) {
        let spec = TypicalSetSpec { d: 10, epsilon: eps };
        let p = project_to_shell(&s, 10).unwrap();
        prop_assert!(in_typical_set(&p, &spec).unwrap());
    }

    #[test]
    fn exactly_one_reward_branch(id in 0.0f64..2000.0, gate in any::<bool>(), typical in any::<bool>()) {
        let cfg = RewardConfig::default();
        let (r, terminal) = reward(id, gate, typical, &cfg);
        let branches = [
            id > cfg.p2 || !typical,
            !(id > cfg.p2 || !typical) && id <= cfg.p1 && gate,
            !(id > cfg.p2 || !typical) && id > cfg.p1 && gate,
            !(id > cfg.p2 || !typical) && !gate,
        ];
        prop_assert_eq!(branches.iter().filter(|b| **b).count(), 1);
        let expected = [-cfg.n, cfg.m * cfg.r, cfg.r, -1.0][branches.iter().position(|b| *b).unwrap()];
        prop_assert_eq!(r, expected);
        prop_assert_eq!(terminal, branches[0]);
    }

    #[test]
    fn transition_is_affine(s1 in vec_of(6), s2 in vec_of(6), g in vec_of(6), k in nonzero(6),
                            w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, t in 0.0f64..0.99) {
        let a = ActionVector { k_gen: g, w1, w2 };
        let k = unit_normalize(&k).unwrap();
        let d1: Vec<f64> = transition(&s1, &a, &k, t).unwrap().iter().zip(&s1).map(|(x, y)| x - y).collect();
        let d2: Vec<f64> = transition(&s2, &a, &k, t).unwrap().iter().zip(&s2).map(|(x, y)| x - y).collect();
        for (x, y) in d1.iter().zip(&d2) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn buckets_are_half_open(i in 0usize..8, frac in 0.0f64..1.0) {
        let spec = BucketSpec { lo: 20.0, hi: 60.0, width: 5.0 };
        let edge = 20.0 + 5.0 * i as f64;
        prop_assert_eq!(bucket_of(edge, &spec), i);
        prop_assert_eq!(bucket_of(edge + 5.0 * frac * 0.999, &spec), i);
    }

    #[test]
    fn gae_matches_definition(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.15)), 1..=32),
        last in -5.0f64..5.0, g in 0.0f64..1.0, l in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let v: Vec<f64> = rows.iter().map(|x| x.1).collect();
        let done: Vec<bool> = rows.iter().map(|x| x.2).collect();
        let (adv, ret) = gae(&r, &v, &done, last, g, l).unwrap();
        let brute = gae_brute(&r, &v, &done, last, g, l);
        for t in 0..r.len() {
            prop_assert!((adv[t] - brute[t]).abs() < 1e-10);
            prop_assert!((ret[t] - (brute[t] + v[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn traversal_norm_closed_form(s in vec_of(16), k in nonzero(16), step in 0.01f64..0.5, n in 1usize..40) {
        let k = unit_normalize(&k).unwrap();
        let pts = linear_traversal(&s, &k, step, n).unwrap();
        let (b, p) = (norm_sq(&s), dot(&s, &k));
        for (i, x) in pts.iter().enumerate() {
            let i = (i + 1) as f64;
            let want = b + 2.0 * i * step * p + i * i * step * step;
            prop_assert!((norm_sq(x) - want).abs() <= 1e-9 * (1.0 + want));
        }
    }

    #[test]
    fn centroid_invariances(seed in any::<u64>(), na in 1usize..10, nb in 1usize..10) {
        let mut r = rng::rng_from_seed(seed);
        let mk = |r: &mut rng::Rng, n| -> Vec<LatentVector> {
            (0..n).map(|_| LatentVector::new(rng::normal_vec(r, 5)).unwrap()).collect()
        };
        let a = mk(&mut r, na);
        let b = mk(&mut r, nb);
        prop_assume!(centroid_direction(&a, &b).is_ok());
        let base = centroid_direction(&a, &b).unwrap();
        let mut ra = a.clone();
        ra.reverse();
        let mut rb = b.clone();
        rb.rotate_left(nb / 2);
        let dup = |g: &[LatentVector]| [g, g].concat();
        for other in [centroid_direction(&ra, &rb).unwrap(), centroid_direction(&dup(&a), &dup(&b)).unwrap()] {
            for (x, y) in base.iter().zip(other.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_removes_age_direction(s in vec_of(8), alpha in -10.0f64..10.0, seed in any::<u64>()) {
        let o = SyntheticOracle::new(SyntheticOracleSpec::random(8, 4.0, 30.0, 0.75, seed).unwrap()).unwrap();
        let k = o.spec().k_age.clone();
        let moved: Vec<f64> = s.iter().zip(k.iter()).map(|(x, kk)| x + alpha * kk).collect();
        let (f0, f1) = (o.identity(&s).unwrap(), o.identity(&moved).unwrap());
        for (x, y) in f0.iter().zip(&f1) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // Π is idempotent and its output is orthogonal to k_age
        prop_assert!(dot(&f0, &k).abs() < 1e-12);
    }

    #[test]
    fn forward_is_pure(seed in any::<u64>()) {
        let mut r = rng::rng_from_seed(seed);
        let p = MlpParams::init(6, &mut r);
        let s = project_to_shell(&rng::normal_vec(&mut r, 6), 6).unwrap();
        let goal = make_goal(s.clone(), Conditioning::Ascending);
        let x = build_input(&s, &goal, 1.0 / 6f64.sqrt()).unwrap();
        let y = forward_policy(&p, &x).unwrap();
        prop_assert_eq!(&y, &forward_policy(&p, &x).unwrap());
        prop_assert!(norm_sq(&y).sqrt() <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Episodes under random policies respect the return bounds, never pay a
    /// bucket twice, and their recorded coverage matches a recount.
    #[test]
    fn episode_invariants(seed in any::<u64>(), gamma in prop::sample::select(vec![0.0, 0.75]), asc in any::<bool>(), log_std in -1.0f64..0.5) {
        let (env, oracle) = desk_env(gamma, seed % 7);
        let mut r = rng::rng_from_seed(seed);
        let mut p = MlpParams::init(8, &mut r);
        p.log_std.iter_mut().for_each(|l| *l = log_std);
        let cond = if asc { Conditioning::Ascending } else { Conditioning::Descending };
        let s0 = LatentVector::new(rng::normal_vec(&mut r, 8)).unwrap();
        let traj = run_policy_episode(&env, &oracle, &p, 0.35, s0, cond, ActionMode::Sample(seed), "p", 0).unwrap();

        let cfg = env.config();
        let rw = &cfg.rewards;
        let count = cfg.buckets.count();
        prop_assert!(traj.episode_return <= rw.m * rw.r * (count - 1) as f64);
        prop_assert!(traj.episode_return >= -((cfg.max_steps - 1) as f64) - rw.n);

        let mut paid = BTreeSet::new();
        for s in traj.steps.iter().filter(|s| s.reward > 0.0) {
            prop_assert!(paid.insert(s.bucket), "bucket {} paid twice", s.bucket);
            // paid buckets lie strictly beyond the base in the goal direction
            if asc {
                prop_assert!(s.bucket > traj.base_bucket);
            } else {
                prop_assert!(s.bucket < traj.base_bucket);
            }
        }

        let m = evaluate_trajectory(&traj, &oracle, cfg).unwrap();
        let eligible: Vec<usize> = latent_steer::env::eligible_buckets(traj.base_bucket, count, cond).collect();
        let recount = eligible
            .iter()
            .filter(|&&b| traj.steps.iter().any(|s| {
                let sb = bucket_of(s.age, &cfg.buckets);
                sb == b && s.in_typical && s.identity_distance <= rw.p2
            }))
            .count();
        prop_assert_eq!(m.covered, recount);
        if traj.done_reason == DoneReason::Success {
            prop_assert!(m.covered == eligible.len());
        }
    }

    #[test]
    fn age_only_actions_preserve_identity(seed in any::<u64>(), ws in prop::collection::vec(-0.5f64..0.5, 1..20)) {
        let (env, oracle) = desk_env(0.0, seed % 5);
        let k = oracle.spec().k_age.clone();
        let s0 = LatentVector::new(rng::normal_vec(&mut rng::rng_from_seed(seed), 8)).unwrap();
        let mut st = env.reset(make_goal(s0, Conditioning::Ascending), &oracle).unwrap();
        for w in ws {
            if st.done {
                break;
            }
            let a = ActionVector { k_gen: k.to_vec(), w1: w, w2: -w };
            let out = env.step(&mut st, &a, &oracle).unwrap();
            prop_assert!(out.info.identity_distance < 1e-20);
        }
    }
}
