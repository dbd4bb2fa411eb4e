//! `invland` command line.
//!
//! Failures print one JSON line to stderr,
//! `{"error":"<kind>","code":<exit code>,"message":"..."}`, and exit with
//! that code:
//!
//! | code | kind |
//! |------|------|
//! | 1 | runtime |
//! | 2 | usage (unknown flag, bad argument) |
//! | 3 | config_unreadable |
//! | 4 | config_invalid |
//! | 5 | checkpoint (missing or corrupt policy/learner file) |
//! | 6 | diverged (non-finite training update) |
//! | 7 | replay_mismatch |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use invland::config::RunConfig;
use invland::env::ApproachCondition;
use invland::episode::ActionMode;
use invland::run::{self, trace_csv};
use invland::Error;

#[derive(Debug, Parser)]
#[command(name = "invland", version, about = "Train and evaluate flip-and-perch ceiling landing policies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration. Missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set sac.batch_size=128`. Repeatable;
    /// applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed (overrides `seed` in the config). A clock seed is used and
    /// recorded when neither is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy; writes config.toml, train_stats.csv, episodes.jsonl,
    /// checkpoints/, policy.bin and learner.bin into the output directory.
    Train {
        /// Output run directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of training episodes (overrides train.episodes).
        #[arg(long)]
        episodes: Option<usize>,
        /// Worker threads. The learner owns all updates and rollouts run in
        /// order, so this does not change results.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a policy at one approach condition and print an outcome
    /// summary line.
    Eval {
        /// Policy or learner checkpoint (with its .json sidecar).
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Approach speed, m/s.
        #[arg(long = "v", value_name = "M_PER_S")]
        speed: f64,
        /// Flight angle above the horizon, deg.
        #[arg(long = "phi", value_name = "DEG")]
        angle: f64,
        /// Number of episodes.
        #[arg(long, default_value_t = 30)]
        n: usize,
        /// Action selection: stochastic, deterministic or uniform
        /// (overrides eval.mode).
        #[arg(long)]
        mode: Option<ActionMode>,
        /// Optional run directory for config, policy copy, episodes.jsonl
        /// and summary.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy over the configured speed/angle grid; writes
    /// landing_map.csv, landing_map.json, policy_region.csv and
    /// episodes.jsonl.
    Sweep {
        /// Policy or learner checkpoint (with its .json sidecar).
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Output run directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads; defaults to the available cores. Results do not
        /// depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Trials per grid cell (overrides sweep.trials).
        #[arg(long)]
        trials: Option<usize>,
        /// Action selection (overrides sweep.mode).
        #[arg(long)]
        mode: Option<ActionMode>,
    },
    /// Re-simulate one logged episode of an eval or sweep run, write its
    /// per-step state and observation trace as CSV, and check the outcome
    /// against the log.
    Replay {
        /// Eval or sweep run directory.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Episode id from episodes.jsonl.
        #[arg(long)]
        id: usize,
        /// Trace CSV path; defaults to <run>/replay_<id>.csv.
        #[arg(long, value_name = "FILE")]
        trace_out: Option<PathBuf>,
    },
    /// Resolve and validate the configuration, then print it as TOML.
    ValidateConfig,
}

struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, code: u8, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
        }
    }

    fn config(e: Error) -> Self {
        match e {
            Error::Io(e) => Self::new("config_unreadable", 3, e.to_string()),
            e => Self::new("config_invalid", 4, e.to_string()),
        }
    }

    fn runtime(e: Error) -> Self {
        match e {
            Error::Checkpoint(_) => Self::new("checkpoint", 5, e.to_string()),
            Error::Diverged { .. } => Self::new("diverged", 6, e.to_string()),
            Error::Config(_) | Error::InvalidParam(_) | Error::OutOfRange(_) => {
                Self::new("config_invalid", 4, e.to_string())
            }
            e => Self::new("runtime", 1, e.to_string()),
        }
    }

    fn emit(&self) -> ExitCode {
        let line = serde_json::json!({
            "error": self.kind,
            "code": self.code,
            "message": self.message,
        });
        eprintln!("{line}");
        ExitCode::from(self.code)
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides).map_err(Failure::config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
        cfg.validate().map_err(Failure::config)?;
    }
    Ok(cfg)
}

fn require_checkpoint(path: &Path) -> Result<(), Failure> {
    if !path.is_file() {
        return Err(Failure::new(
            "checkpoint",
            5,
            format!("checkpoint not found: {}", path.display()),
        ));
    }
    run::check_policy(path).map_err(Failure::runtime)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::ValidateConfig => {
            print!("{}", cfg.to_toml().map_err(Failure::config)?);
        }
        Command::Train { out, episodes, workers } => {
            if workers == 0 {
                return Err(Failure::new("usage", 2, "--workers must be >= 1"));
            }
            if let Some(n) = episodes {
                cfg.train.episodes = n;
            }
            let seed = cfg.resolve_seed();
            println!("seed={seed} episodes={} out={}", cfg.train.episodes, out.display());
            let res = run::train_run(&cfg, &out, |s| {
                if (s.episode + 1) % 100 == 0 {
                    println!(
                        "episode={} rolling_mean={:.4} entropy={:.3} beta={:.4}",
                        s.episode + 1,
                        s.rolling_mean,
                        s.entropy,
                        s.beta
                    );
                }
            })
            .map_err(Failure::runtime)?;
            let last = res.stats.last().map(|s| s.rolling_mean).unwrap_or(0.0);
            println!(
                "done seed={} final_rolling_mean={last:.4} policy={}",
                res.seed,
                res.policy_path.display()
            );
        }
        Command::Eval {
            checkpoint,
            speed,
            angle,
            n,
            mode,
            out,
        } => {
            require_checkpoint(&checkpoint)?;
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            let seed = cfg.resolve_seed();
            let condition = ApproachCondition { speed, angle_deg: angle };
            let (summary, _) =
                run::eval_run(&cfg, &checkpoint, condition, n, out.as_deref()).map_err(Failure::runtime)?;
            println!("seed={seed} {}", summary.line());
        }
        Command::Sweep {
            checkpoint,
            out,
            workers,
            trials,
            mode,
        } => {
            require_checkpoint(&checkpoint)?;
            if let Some(t) = trials {
                cfg.sweep.trials = t;
            }
            if let Some(m) = mode {
                cfg.sweep.mode = m;
            }
            cfg.validate().map_err(Failure::config)?;
            let workers = workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            });
            if workers == 0 {
                return Err(Failure::new("usage", 2, "--workers must be >= 1"));
            }
            let seed = cfg.resolve_seed();
            let (map, _) = run::sweep_run(&cfg, &checkpoint, workers, Some(&out)).map_err(Failure::runtime)?;
            let trials: usize = map.cells.iter().map(|c| c.trials).sum();
            let four: usize = map.cells.iter().map(|c| c.n_fourleg).sum();
            println!(
                "seed={seed} cells={} episodes={trials} four_leg={four} out={}",
                map.cells.len(),
                out.display()
            );
        }
        Command::Replay { run: dir, id, trace_out } => {
            let res = run::replay_run(&dir, id).map_err(|e| match e {
                Error::Io(_) => Failure::new("runtime", 1, e.to_string()),
                e => Failure::runtime(e),
            })?;
            let path = trace_out.unwrap_or_else(|| dir.join(format!("replay_{id}.csv")));
            std::fs::write(&path, trace_csv(&res.trace)).map_err(|e| Failure::runtime(e.into()))?;
            println!(
                "id={id} logged={} replayed={} match={} trace={}",
                res.logged.outcome.label(),
                res.replayed.outcome.label(),
                res.matches(),
                path.display()
            );
            if !res.matches() {
                return Err(Failure::new(
                    "replay_mismatch",
                    7,
                    format!("episode {id} replayed to a different record than logged"),
                ));
            }
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
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return Failure::new("usage", 2, first).emit();
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.emit(),
    }
}
