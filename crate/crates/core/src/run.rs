//! Run directories and the end-to-end workflows behind the command line.
//!
//! A training run directory holds everything needed to re-evaluate it:
//!
//! ```text
//! <run>/config.json            resolved configuration snapshot
//! <run>/metrics.jsonl          one row per update
//! <run>/reward_curve.csv       step,mean_return,return_variance
//! <run>/checkpoints/step_<N>.json
//! <run>/checkpoints/final.json
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::algo::{MetricsRow, Trainer};
use crate::baselines::{age_clusters, centroid_direction, default_step_size, resolve_hyperplane};
use crate::calibrate::{calibrate_thresholds, Calibration};
use crate::checkpoint::Checkpoint;
use crate::config::{self, RunConfig};
use crate::env::{Conditioning, LatentEnv};
use crate::error::{Error, Result};
use crate::eval::{compare, eval_bases, run_policy_episode, ActionMode, CompareReport, Method};
use crate::geometry::{cosine, sample_latent};
use crate::oracle::{Oracle, OracleHandle, RemoteOracle};
use crate::policy::MlpParams;
use crate::rng::{self, derive_seed, stream};
use crate::trajectory::{TrajectoryRecord, TrajectoryWriter};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CURVE_FILE: &str = "reward_curve.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const ABORT_CHECKPOINT: &str = "abort.json";

/// Oracle and environment built from a config.
pub struct Setup {
    pub oracle: OracleHandle,
    pub env: LatentEnv,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let d = cfg.env.d();
        let oracle = OracleHandle::from_descriptor(&cfg.oracle, d)?;
        let k = resolve_hyperplane(&cfg.env.hyperplane, &oracle, d)?;
        let env = LatentEnv::new(cfg.env.clone(), k)?;
        Ok(Self { oracle, env })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    w.write_all(line.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `text` to `path` in one go.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub mean_return: Option<f64>,
    pub final_checkpoint: PathBuf,
}

/// Trains per `cfg` into `run_dir`, which must not already hold a run.
/// `on_row` sees each metrics row as it is written.
pub fn train(cfg: &RunConfig, run_dir: &Path, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainSummary> {
    if run_dir.join(CONFIG_FILE).exists() {
        return Err(Error::InvalidConfig(vec![format!(
            "{} already holds a run; choose another run directory",
            run_dir.display()
        )]));
    }
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write_file(&run_dir.join(CONFIG_FILE), &cfg.to_pretty_json())?;
    let hash = cfg.hash();

    let setup = Setup::new(cfg)?;
    let mut trainer = Trainer::new(cfg.train.clone(), &setup.env, &setup.oracle)?;

    let metrics_path = run_dir.join(METRICS_FILE);
    let curve_path = run_dir.join(CURVE_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut curve = create(&curve_path)?;
    write_line(&mut curve, &curve_path, "step,mean_return,return_variance")?;

    while !trainer.is_done() {
        let before = trainer.checkpoint(&hash);
        let row = match trainer.step() {
            Ok((row, _)) => row,
            Err(e) => {
                // keep the last finite parameters for post-mortem
                before.save(&ckpt_dir.join(ABORT_CHECKPOINT))?;
                return Err(e);
            }
        };
        write_line(&mut metrics, &metrics_path, &serde_json::to_string(&row)?)?;
        let (m, v) = match trainer.return_stats() {
            Some((m, v)) => (m.to_string(), v.to_string()),
            None => (String::new(), String::new()),
        };
        write_line(&mut curve, &curve_path, &format!("{},{m},{v}", row.step))?;
        on_row(&row);
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.updates() % every == 0 && !trainer.is_done() {
            trainer
                .checkpoint(&hash)
                .save(&ckpt_dir.join(format!("step_{:010}.json", trainer.env_steps())))?;
        }
    }
    let final_path = ckpt_dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint(&hash).save(&final_path)?;
    Ok(TrainSummary {
        run_dir: run_dir.to_owned(),
        env_steps: trainer.env_steps(),
        updates: trainer.updates(),
        episodes: trainer.episodes(),
        mean_return: trainer.return_stats().map(|(m, _)| m),
        final_checkpoint: final_path,
    })
}

/// Loads `config.json` and the final checkpoint of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Checkpoint)> {
    let cfg = config::load_snapshot(&dir.join(CONFIG_FILE))?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT))?;
    Ok((cfg, ckpt))
}

/// Finds the `config.json` of the run a checkpoint file belongs to.
pub fn config_for_checkpoint(ckpt: &Path) -> Option<PathBuf> {
    ckpt.ancestors().skip(1).take(2).map(|d| d.join(CONFIG_FILE)).find(|p| p.exists())
}

fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.meta.d != cfg.env.d() {
        return Err(Error::DimensionMismatch {
            expected: cfg.env.d(),
            actual: ckpt.meta.d,
        });
    }
    Ok(())
}

/// The policy a fresh trainer with this config starts from.
pub fn untrained_policy(cfg: &RunConfig) -> MlpParams {
    MlpParams::init(cfg.env.d(), &mut rng::rng_from_seed(derive_seed(cfg.train.seed, stream::INIT_POLICY)))
}

/// Everything the comparison methods borrow.
pub struct MethodInputs {
    pub trained: Option<Checkpoint>,
    pub untrained: MlpParams,
    pub input_scale: f64,
}

impl MethodInputs {
    pub fn new(cfg: &RunConfig, trained: Option<Checkpoint>) -> Self {
        let input_scale = trained
            .as_ref()
            .map(|c| c.meta.input_scale)
            .unwrap_or_else(|| cfg.train.input_scale.unwrap_or_else(|| crate::policy::default_input_scale(cfg.env.d())));
        Self {
            trained,
            untrained: untrained_policy(cfg),
            input_scale,
        }
    }
}

/// Builds the named methods. `policy`, `ppo` and `a2c` all mean the trained
/// checkpoint (labelled with the config's algorithm); `random` is the
/// untrained policy sampling its actions.
pub fn build_methods<'a>(
    cfg: &RunConfig,
    setup: &Setup,
    names: &[String],
    inputs: &'a MethodInputs,
) -> Result<Vec<Method<'a>>> {
    let steps = cfg.eval.traversal_steps.unwrap_or(cfg.env.max_steps);
    let step_for = |k: &[f64]| -> Result<f64> {
        match cfg.eval.traversal_step_size {
            Some(s) => Ok(s),
            None => default_step_size(&setup.oracle, k, &cfg.env.buckets, steps),
        }
    };
    let mut out = Vec::new();
    for name in names {
        let m = match name.as_str() {
            "policy" | "ppo" | "a2c" => {
                let ckpt = inputs.trained.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(vec![format!("method `{name}` needs a trained checkpoint")])
                })?;
                check_compatible(cfg, ckpt)?;
                Method::Policy {
                    name: cfg.train.algo.to_string(),
                    params: &ckpt.policy,
                    input_scale: inputs.input_scale,
                    sample_seed: None,
                }
            }
            "random" => Method::Policy {
                name: "random".to_owned(),
                params: &inputs.untrained,
                input_scale: inputs.input_scale,
                sample_seed: Some(derive_seed(cfg.eval.seed, stream::EVAL_ACTIONS)),
            },
            "linear" => {
                let k = setup.env.k_hyp().clone();
                Method::Traversal {
                    name: "linear".to_owned(),
                    step_size: step_for(&k)?,
                    direction: k,
                    n_steps: steps,
                }
            }
            "centroid" => {
                let (young, old) = age_clusters(
                    &setup.oracle,
                    cfg.env.d(),
                    cfg.eval.centroid_candidates,
                    cfg.eval.centroid_cluster,
                    cfg.eval.seed,
                )?;
                let k = centroid_direction(&young, &old)?;
                Method::Traversal {
                    name: "centroid".to_owned(),
                    step_size: step_for(&k)?,
                    direction: k,
                    n_steps: steps,
                }
            }
            other => {
                return Err(Error::InvalidConfig(vec![format!(
                    "unknown method `{other}` (expected one of {})",
                    config::METHODS.join(", ")
                )]))
            }
        };
        out.push(m);
    }
    Ok(out)
}

/// Runs the comparison; trajectories go to `traj_out` when given.
pub fn run_compare(
    cfg: &RunConfig,
    setup: &Setup,
    names: &[String],
    trained: Option<Checkpoint>,
    episodes: usize,
    traj_out: Option<&Path>,
) -> Result<CompareReport> {
    let inputs = MethodInputs::new(cfg, trained);
    let methods = build_methods(cfg, setup, names, &inputs)?;
    let mut writer = match traj_out {
        Some(p) => Some((TrajectoryWriter::new(create(p)?, cfg.eval.log_latents), p)),
        None => None,
    };
    compare(&methods, &setup.env, &setup.oracle, episodes, cfg.eval.seed, |t| match writer.as_mut() {
        Some((w, _)) => w.write(t),
        None => Ok(()),
    })
}

/// Writes the report as JSON and CSV side by side: `path` gets the format its
/// extension names (JSON unless `.csv`) and the sibling gets the other.
pub fn write_report(path: &Path, report: &CompareReport) -> Result<(PathBuf, PathBuf)> {
    let is_csv = path.extension().is_some_and(|e| e == "csv");
    let (json_path, csv_path) = if is_csv {
        (path.with_extension("json"), path.to_owned())
    } else {
        (path.to_owned(), path.with_extension("csv"))
    };
    write_file(&json_path, &serde_json::to_string_pretty(report)?)?;
    write_file(&csv_path, &crate::eval::to_csv(&report.rows))?;
    Ok((json_path, csv_path))
}

/// Evaluates a run directory with the methods listed in its config.
pub fn eval_run(dir: &Path, episodes: Option<usize>) -> Result<CompareReport> {
    let (cfg, ckpt) = load_run(dir)?;
    let setup = Setup::new(&cfg)?;
    let names = cfg.eval.methods.clone();
    run_compare(&cfg, &setup, &names, Some(ckpt), episodes.unwrap_or(cfg.eval.episodes), None)
}

/// Policy rollouts from held-out bases under one conditioning.
pub fn rollout(
    cfg: &RunConfig,
    setup: &Setup,
    ckpt: &Checkpoint,
    conditioning: Conditioning,
    episodes: usize,
    sample: bool,
    mut sink: impl FnMut(&TrajectoryRecord) -> Result<()>,
) -> Result<()> {
    check_compatible(cfg, ckpt)?;
    let bases = eval_bases(cfg.eval.seed, episodes, cfg.env.d())?;
    let action_seed = derive_seed(cfg.eval.seed, stream::EVAL_ACTIONS);
    for (i, b) in bases.into_iter().enumerate() {
        let mode = if sample {
            ActionMode::Sample(derive_seed(action_seed, i as u64))
        } else {
            ActionMode::Mean
        };
        let name = cfg.train.algo.to_string();
        let t = run_policy_episode(&setup.env, &setup.oracle, &ckpt.policy, ckpt.meta.input_scale, b, conditioning, mode, &name, i)?;
        sink(&t)?;
    }
    Ok(())
}

/// Calibrated thresholds for the config's oracle.
pub fn calibrate(cfg: &RunConfig, setup: &Setup) -> Result<Calibration> {
    calibrate_thresholds(
        &cfg.env,
        &setup.env,
        &setup.oracle,
        cfg.eval.calibration_samples,
        cfg.eval.calibration_quantile,
        cfg.train.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub protocol: String,
    pub d: usize,
    pub feature_dim: usize,
    pub ops: Vec<String>,
    pub age: f64,
    pub feature_norm: f64,
    pub deterministic: bool,
    pub batch_matches_single: bool,
    /// Cosine between the features of two independent latents.
    pub feature_cosine_independent: f64,
}

/// Connects to a remote oracle and exercises every required operation.
pub fn check_oracle(endpoint: &str, timeout: Duration) -> Result<OracleCheck> {
    let o = RemoteOracle::connect(endpoint, timeout)?;
    let hs = o.handshake().clone();
    let a = sample_latent(derive_seed(0, stream::ORACLE), hs.d)?;
    let b = sample_latent(derive_seed(1, stream::ORACLE), hs.d)?;
    let age = o.age(&a)?;
    let fa = o.identity(&a)?;
    let fb = o.identity(&b)?;
    let deterministic = o.age(&a)?.to_bits() == age.to_bits() && o.identity(&a)? == fa;
    let batch: [&[f64]; 2] = [&a, &b];
    let batch_matches_single = o.ages(&batch)? == vec![age, o.age(&b)?] && o.identities(&batch)? == vec![fa.clone(), fb.clone()];
    Ok(OracleCheck {
        protocol: hs.protocol,
        d: hs.d,
        feature_dim: hs.feature_dim,
        ops: hs.ops,
        age,
        feature_norm: crate::geometry::norm(&fa),
        deterministic,
        batch_matches_single,
        feature_cosine_independent: cosine(&fa, &fb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigSources;

    fn tiny() -> RunConfig {
        config::load(&ConfigSources {
            profile: Some("tiny"),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn run_directory_layout_and_determinism() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let mut rows = 0;
        let s = train(&cfg, &a, |_| rows += 1).unwrap();
        train(&cfg, &b, |_| {}).unwrap();
        assert!(s.env_steps >= cfg.train.total_steps);
        assert_eq!(rows as u64, s.updates);
        for f in [CONFIG_FILE, METRICS_FILE, CURVE_FILE] {
            let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
            assert_eq!(x, y, "{f} differs between identical runs");
        }
        assert_eq!(
            fs::read(a.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT)).unwrap(),
            fs::read(b.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT)).unwrap()
        );
        let curve = fs::read_to_string(a.join(CURVE_FILE)).unwrap();
        assert_eq!(curve.lines().next(), Some("step,mean_return,return_variance"));
        assert_eq!(curve.lines().count() as u64, s.updates + 1);
        // periodic checkpoints: every 4 updates, final excluded
        let periodic = fs::read_dir(a.join(CHECKPOINT_DIR)).unwrap().count() - 1;
        assert_eq!(periodic as u64, (s.updates - 1) / 4);
        // refuses to overwrite
        assert!(train(&cfg, &a, |_| {}).is_err());
    }

    #[test]
    fn eval_from_directory_is_reproducible() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("r");
        train(&cfg, &run, |_| {}).unwrap();
        let r1 = eval_run(&run, None).unwrap();
        let r2 = eval_run(&run, None).unwrap();
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
        assert_eq!(r1.rows.len(), 2 * cfg.eval.methods.len());
        assert_eq!(r1.rows[0].method, "ppo");
        let (j, c) = write_report(&dir.path().join("report.json"), &r1).unwrap();
        assert!(j.exists() && c.exists());
        assert!(fs::read_to_string(c).unwrap().starts_with(crate::eval::CSV_HEADER));
    }

    #[test]
    fn checkpoint_config_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("r");
        train(&tiny(), &run, |_| {}).unwrap();
        let found = config_for_checkpoint(&run.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(found, run.join(CONFIG_FILE));
    }

    #[test]
    fn desk_thresholds_match_fresh_calibration() {
        let cfg = config::load(&ConfigSources {
            profile: Some("desk"),
            ..Default::default()
        })
        .unwrap();
        let setup = Setup::new(&cfg).unwrap();
        let c = calibrate(&cfg, &setup).unwrap();
        assert_eq!(c.p1, cfg.env.rewards.p1);
        assert_eq!(c.p2, cfg.env.rewards.p2);
    }
}
