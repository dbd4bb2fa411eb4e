//! Run-directory workflows shared by the command line and the tests:
//! training, single-condition evaluation, sweeps and episode replay.
//!
//! Every run directory holds `config.toml` (fully resolved, seed included)
//! and the policy it used, so a run can be repeated bit for bit.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, load_policy, save_learner, save_policy, sidecar_path, PolicySidecar};
use crate::config::RunConfig;
use crate::env::{ApproachCondition, EnvConfig, EpisodeRecord, TraceRow};
use crate::episode::{run_episode, ActionMode};
use crate::error::{Error, Result};
use crate::learner::{EpisodeStats, LandingTask, Trainer};
use crate::policy::PolicyParams;
use crate::rng::eval_stream;
use crate::sweep::{export_policy_region, region_csv, run_sweep, LandingRateMap};

pub const CONFIG_FILE: &str = "config.toml";
pub const POLICY_FILE: &str = "policy.bin";
pub const LEARNER_FILE: &str = "learner.bin";
pub const STATS_FILE: &str = "train_stats.csv";
pub const EPISODES_FILE: &str = "episodes.jsonl";

/// One line of an `episodes.jsonl` log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedEpisode {
    pub id: usize,
    pub mode: ActionMode,
    /// Whether the episode can be re-simulated from the run directory alone.
    pub replayable: bool,
    pub record: EpisodeRecord,
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

fn sidecar_for(cfg: &RunConfig, policy: &PolicyParams) -> PolicySidecar {
    PolicySidecar::new(policy, &cfg.sensing, cfg.episode.trigger_threshold)
}

/// Reads a policy and adapts the environment to its observation scaling.
pub fn load_policy_for(cfg: &RunConfig, path: &Path) -> Result<(PolicyParams, EnvConfig)> {
    let (policy, side) = load_policy(path)?;
    let mut env = cfg.env();
    env.sensing = side.sensing;
    env.episode.trigger_threshold = side.trigger_threshold;
    env.validate()?;
    Ok((policy, env))
}

fn copy_policy(src: &Path, dir: &Path) -> Result<PathBuf> {
    let dst = dir.join(POLICY_FILE);
    if fs::canonicalize(src).ok() != fs::canonicalize(&dst).ok() {
        // learner checkpoints carry extra blocks; keep only the actor
        let (policy, side) = load_policy(src)?;
        save_policy(&dst, &policy, &side)?;
    }
    Ok(dst)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub seed: u64,
    pub stats: Vec<EpisodeStats>,
    pub policy_path: PathBuf,
    pub learner_path: PathBuf,
}

/// Trains from scratch into `dir`. On divergence the last good learner
/// state is written to `diverged_learner.bin` before the error is returned.
pub fn train_run(cfg: &RunConfig, dir: &Path, mut progress: impl FnMut(&EpisodeStats)) -> Result<TrainOutput> {
    let mut cfg = cfg.clone();
    let seed = cfg.resolve_seed();
    cfg.validate()?;
    write_config(dir, &cfg)?;
    let ckpt_dir = dir.join("checkpoints");
    if cfg.train.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let mut stats_out = BufWriter::new(fs::File::create(dir.join(STATS_FILE))?);
    writeln!(stats_out, "{}", EpisodeStats::CSV_HEADER)?;
    let mut episodes_out = BufWriter::new(fs::File::create(dir.join(EPISODES_FILE))?);

    let task = LandingTask { cfg: cfg.env() };
    let mut trainer = Trainer::new(task, cfg.sac, seed, cfg.train.rolling_window)?;
    let result = trainer.train(cfg.train.episodes, |s, roll, tr| {
        writeln!(stats_out, "{}", s.csv_row())?;
        if let Some(record) = roll.record {
            let line = LoggedEpisode {
                id: s.episode,
                mode: if s.warmup { cfg.sac.warmup_mode } else { ActionMode::Stochastic },
                replayable: false,
                record,
            };
            writeln!(episodes_out, "{}", serde_json::to_string(&line)?)?;
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && (s.episode + 1) % every == 0 {
            let p = ckpt_dir.join(format!("learner_{:05}.bin", s.episode + 1));
            save_learner(&p, &tr.sac, &sidecar_for(&cfg, &tr.sac.actor))?;
        }
        progress(s);
        Ok(())
    });
    stats_out.flush()?;
    episodes_out.flush()?;
    let side = sidecar_for(&cfg, &trainer.sac.actor);
    let stats = match result {
        Ok(stats) => stats,
        Err(e @ Error::Diverged { .. }) => {
            save_learner(&dir.join("diverged_learner.bin"), &trainer.sac, &side)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let policy_path = dir.join(POLICY_FILE);
    let learner_path = dir.join(LEARNER_FILE);
    save_policy(&policy_path, &trainer.sac.actor, &side)?;
    save_learner(&learner_path, &trainer.sac, &side)?;
    Ok(TrainOutput {
        seed,
        stats,
        policy_path,
        learner_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub condition: ApproachCondition,
    pub episodes: usize,
    pub n_fourleg: usize,
    pub n_twoleg: usize,
    pub n_fail: usize,
    pub n_bodycontact: usize,
    pub mean_reward: f64,
}

impl EvalSummary {
    pub fn line(&self) -> String {
        format!(
            "V={} phi={} four_leg={}/{} two_leg={}/{} fail={}/{} body_contact={}/{} mean_reward={:.4}",
            self.condition.speed,
            self.condition.angle_deg,
            self.n_fourleg,
            self.episodes,
            self.n_twoleg,
            self.episodes,
            self.n_fail,
            self.episodes,
            self.n_bodycontact,
            self.episodes,
            self.mean_reward
        )
    }
}

/// `n` episodes at one approach condition, on evaluation streams `0..n`.
pub fn eval_run(
    cfg: &RunConfig,
    policy_path: &Path,
    condition: ApproachCondition,
    n: usize,
    dir: Option<&Path>,
) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    let mut cfg = cfg.clone();
    let seed = cfg.resolve_seed();
    condition.validate()?;
    if n == 0 {
        return Err(Error::InvalidParam("episode count must be >= 1".into()));
    }
    let (policy, env) = load_policy_for(&cfg, policy_path)?;
    let mode = cfg.eval.mode;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        records.push(run_episode(&env, &policy, mode, seed, eval_stream(i), Some(condition), false)?.record);
    }
    let mut s = EvalSummary {
        condition,
        episodes: n,
        n_fourleg: 0,
        n_twoleg: 0,
        n_fail: 0,
        n_bodycontact: 0,
        mean_reward: records.iter().map(|r| r.reward.total).sum::<f64>() / n as f64,
    };
    for r in &records {
        match r.outcome.n_legs {
            3.. => s.n_fourleg += 1,
            1 | 2 => s.n_twoleg += 1,
            0 => s.n_fail += 1,
        }
        s.n_bodycontact += r.outcome.body_contact as usize;
    }
    if let Some(dir) = dir {
        write_config(dir, &cfg)?;
        copy_policy(policy_path, dir)?;
        write_episode_log(dir, &records, mode)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&s)?)?;
    }
    Ok((s, records))
}

fn write_episode_log(dir: &Path, records: &[EpisodeRecord], mode: ActionMode) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(dir.join(EPISODES_FILE))?);
    for (id, r) in records.iter().enumerate() {
        let line = LoggedEpisode {
            id,
            mode,
            replayable: true,
            record: *r,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Sweeps the configured grid and writes the map and region tables.
pub fn sweep_run(
    cfg: &RunConfig,
    policy_path: &Path,
    workers: usize,
    dir: Option<&Path>,
) -> Result<(LandingRateMap, Vec<EpisodeRecord>)> {
    let mut cfg = cfg.clone();
    let seed = cfg.resolve_seed();
    let (policy, env) = load_policy_for(&cfg, policy_path)?;
    let (map, records) = run_sweep(&policy, &cfg.sweep.grid(), &env, cfg.sweep.mode, seed, workers)?;
    if let Some(dir) = dir {
        write_config(dir, &cfg)?;
        copy_policy(policy_path, dir)?;
        fs::write(dir.join("landing_map.csv"), map.to_csv())?;
        fs::write(dir.join("landing_map.json"), map.to_json()?)?;
        fs::write(dir.join("policy_region.csv"), region_csv(&export_policy_region(&records, None)?))?;
        write_episode_log(dir, &records, cfg.sweep.mode)?;
    }
    Ok((map, records))
}

pub fn read_episode_log(path: &Path) -> Result<Vec<LoggedEpisode>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub logged: EpisodeRecord,
    pub replayed: EpisodeRecord,
    pub trace: Vec<TraceRow>,
}

impl ReplayOutput {
    pub fn matches(&self) -> bool {
        self.logged == self.replayed
    }
}

pub const TRACE_HEADER: &str = "time,phase,x,z,vx,vz,pitch,pitch_rate,tau,theta_x,d_ceil";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        let phase = match r.phase {
            crate::env::Phase::Approach => "approach",
            crate::env::Phase::Flip => "flip",
            crate::env::Phase::Swing => "swing",
        };
        s += &format!(
            "{:.17e},{phase},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{}\n",
            r.time,
            r.x,
            r.z,
            r.vx,
            r.vz,
            r.pitch,
            r.pitch_rate,
            opt(r.tau),
            opt(r.theta_x),
            opt(r.d_ceil)
        );
    }
    s
}

/// Re-simulates episode `id` of an evaluation or sweep run directory.
pub fn replay_run(run_dir: &Path, id: usize) -> Result<ReplayOutput> {
    let cfg = RunConfig::load(Some(&run_dir.join(CONFIG_FILE)), &[])?;
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Config("run config has no seed".into()))?;
    let log = read_episode_log(&run_dir.join(EPISODES_FILE))?;
    let entry = log
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::InvalidParam(format!("episode {id} not in the log")))?;
    if !entry.replayable {
        return Err(Error::InvalidState(format!(
            "episode {id} was played by a policy that is no longer stored; replay eval or sweep runs"
        )));
    }
    let policy_path = run_dir.join(POLICY_FILE);
    if !policy_path.exists() || !sidecar_path(&policy_path).exists() {
        return Err(Error::Checkpoint(format!("missing {}", policy_path.display())));
    }
    let (policy, env) = load_policy_for(&cfg, &policy_path)?;
    let r = entry.record;
    if r.seed != seed {
        return Err(Error::Config("log seed differs from the run config seed".into()));
    }
    let condition = (!r.condition_sampled).then_some(r.condition);
    let out = run_episode(&env, &policy, entry.mode, r.seed, r.stream, condition, true)?;
    Ok(ReplayOutput {
        logged: r,
        replayed: out.record,
        trace: out.trace.unwrap_or_default(),
    })
}

/// Checks that a policy file and its sidecar load.
pub fn check_policy(path: &Path) -> Result<()> {
    checkpoint::load_policy(path).map(|_| ())
}
