//! `latent-steer` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
//! Errors are printed to stderr as a single JSON line.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use latent_steer::algo::Algo;
use latent_steer::checkpoint::Checkpoint;
use latent_steer::config::{self, ConfigSources, RunConfig, SEED_ENV_VAR};
use latent_steer::env::Conditioning;
use latent_steer::run::{self, Setup};
use latent_steer::trajectory::TrajectoryWriter;
use latent_steer::Error;

#[derive(Parser)]
#[command(name = "latent-steer", version, about = "Goal-conditioned RL in a generative model's latent space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file (an empty file means "profile defaults").
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile (desk, paper, tiny) or a profile JSON file.
    #[arg(long)]
    profile: Option<String>,
    /// Override a config key, e.g. `--set env.smoothing=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<output_dir>/<run_name>`.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Suppress per-update progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Roll out a checkpoint from held-out bases and log trajectories.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_order)]
        order: Conditioning,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Config to use instead of the checkpoint's run snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log_latents: bool,
        /// Sample actions instead of taking the policy mean.
        #[arg(long)]
        sample: bool,
    },
    /// Evaluate a run directory against the baselines in its config.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Report path (JSON; a CSV table is written next to it).
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare methods on shared held-out bases.
    Compare {
        /// Comma-separated: policy|ppo|a2c, random, linear, centroid.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint, needed by the policy method.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output table; `.csv` or `.json`, the other format goes alongside.
        #[arg(long)]
        out: PathBuf,
        /// Also write every trajectory as JSONL.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Remote oracle utilities.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Estimate identity thresholds P1/P2 for the configured oracle.
    CalibrateThresholds {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Handshake with a server and exercise its operations.
    Check {
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
}

fn parse_order(s: &str) -> Result<Conditioning, String> {
    s.parse()
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn runtime(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidConfig(_) => "invalid_config",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Transport(_) => "transport",
        Error::Checksum { .. } | Error::Checkpoint(_) => "checkpoint",
        Error::TrajectoryRead { .. } => "trajectory",
        Error::NonFinite { .. } => "non_finite",
        _ => "runtime",
    }
}

fn report(f: &Failure) {
    let details = match &f.error {
        Error::InvalidConfig(list) => list.clone(),
        _ => Vec::new(),
    };
    let line = json!({ "error": kind(&f.error), "message": f.error.to_string(), "details": details });
    eprintln!("{line}");
}

fn load_config(args: &ConfigArgs, extra: &[String]) -> Result<RunConfig, Failure> {
    if args.config.is_none() && args.profile.is_none() {
        return Err(usage(Error::InvalidConfig(vec!["give --config and/or --profile".to_owned()])));
    }
    let overrides: Vec<String> = args.overrides.iter().chain(extra).cloned().collect();
    config::load(&ConfigSources {
        file: args.config.as_deref(),
        profile: args.profile.as_deref(),
        overrides: &overrides,
        env_seed: std::env::var(SEED_ENV_VAR).ok(),
    })
    .map_err(usage)
}

fn setup(cfg: &RunConfig) -> Result<Setup, Failure> {
    Setup::new(cfg).map_err(runtime)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("serializable output"));
}

fn open_out(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(Error::io(path, e)))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            cfg,
            algo,
            seed,
            run_dir,
            quiet,
        } => {
            let mut extra = Vec::new();
            if let Some(a) = algo {
                extra.push(format!("train.algo=\"{a}\""));
            }
            if let Some(s) = seed {
                extra.push(format!("train.seed={s}"));
            }
            let config = load_config(&cfg, &extra)?;
            let dir = run_dir.unwrap_or_else(|| config.output_dir.join(&config.run_name));
            let summary = run::train(&config, &dir, |row| {
                if !quiet {
                    eprintln!("{}", serde_json::to_string(row).expect("row serializes"));
                }
            })
            .map_err(|e| match e {
                Error::InvalidConfig(_) => usage(e),
                e => runtime(e),
            })?;
            print_json(&summary);
        }
        Command::Rollout {
            checkpoint,
            order,
            episodes,
            out,
            config,
            log_latents,
            sample,
        } => {
            let cfg_path = config
                .or_else(|| run::config_for_checkpoint(&checkpoint))
                .ok_or_else(|| {
                    usage(Error::InvalidConfig(vec![format!(
                        "no config.json found next to {}; pass --config",
                        checkpoint.display()
                    )]))
                })?;
            let cfg = config::load_snapshot(&cfg_path).map_err(usage)?;
            let ckpt = Checkpoint::load(&checkpoint).map_err(usage)?;
            let s = setup(&cfg)?;
            let mut w = TrajectoryWriter::new(open_out(&out)?, log_latents);
            let mut count = 0usize;
            run::rollout(&cfg, &s, &ckpt, order, episodes, sample, |t| {
                count += 1;
                w.write(t)
            })
            .map_err(runtime)?;
            print_json(&json!({ "episodes": count, "out": out }));
        }
        Command::Eval { run, episodes, report } => {
            if !run.join(run::CONFIG_FILE).exists() {
                return Err(usage(Error::InvalidConfig(vec![format!(
                    "{} is not a run directory (no {})",
                    run.display(),
                    run::CONFIG_FILE
                )])));
            }
            let rep = run::eval_run(&run, episodes).map_err(runtime)?;
            let (j, c) = run::write_report(&report, &rep).map_err(runtime)?;
            print_json(&json!({ "report": j, "table": c, "base_set_hash": rep.base_set_hash, "rows": rep.rows }));
        }
        Command::Compare {
            methods,
            cfg,
            checkpoint,
            episodes,
            out,
            trajectories,
        } => {
            let config = load_config(&cfg, &[])?;
            if methods.is_empty() {
                return Err(usage(Error::InvalidConfig(vec!["--methods is empty".to_owned()])));
            }
            for m in &methods {
                if !config::METHODS.contains(&m.as_str()) {
                    return Err(usage(Error::InvalidConfig(vec![format!("unknown method `{m}`")])));
                }
            }
            let ckpt = match &checkpoint {
                Some(p) => Some(Checkpoint::load(p).map_err(usage)?),
                None => None,
            };
            let s = setup(&config)?;
            let rep = run::run_compare(
                &config,
                &s,
                &methods,
                ckpt,
                episodes.unwrap_or(config.eval.episodes),
                trajectories.as_deref(),
            )
            .map_err(|e| match e {
                Error::InvalidConfig(_) => usage(e),
                e => runtime(e),
            })?;
            let (j, c) = run::write_report(&out, &rep).map_err(runtime)?;
            print_json(&json!({ "report": j, "table": c, "base_set_hash": rep.base_set_hash, "rows": rep.rows }));
        }
        Command::Oracle {
            command: OracleCommand::Check { endpoint, timeout_ms },
        } => {
            let check = run::check_oracle(&endpoint, Duration::from_millis(timeout_ms)).map_err(|e| match e {
                Error::Transport(latent_steer::TransportError::BadEndpoint(_)) => usage(e),
                e => runtime(e),
            })?;
            print_json(&check);
        }
        Command::CalibrateThresholds { cfg } => {
            let config = load_config(&cfg, &[])?;
            let s = setup(&config)?;
            let c = run::calibrate(&config, &s).map_err(runtime)?;
            print_json(&json!({
                "env.rewards.p1": c.p1,
                "env.rewards.p2": c.p2,
                "calibration": c,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            let msg = e.kind().to_string();
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_owned();
            eprintln!("{}", json!({ "error": "usage", "message": detail, "details": [msg] }));
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}
