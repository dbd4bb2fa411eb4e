//! Runs whole episodes with a policy and collects their transitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ApproachCondition, EnvConfig, EpisodeRecord, LandingEnv, TraceRow, Transition};
use crate::error::{Error, Result};
use crate::policy::{
    mean_action, policy_forward, sample_action, uniform_action, ActionSample, PolicyParams,
};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Sample both heads.
    #[default]
    Stochastic,
    /// Use the head means.
    Deterministic,
    /// Uniform over the squashed action box (warmup).
    Uniform,
}

impl std::str::FromStr for ActionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Self::Stochastic),
            "deterministic" => Ok(Self::Deterministic),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown action mode '{other}'"))),
        }
    }
}

pub fn choose_action<R: Rng + ?Sized>(
    policy: &PolicyParams,
    obs: &[f64; 3],
    mode: ActionMode,
    threshold: f64,
    rng: &mut R,
) -> Result<ActionSample> {
    Ok(match mode {
        ActionMode::Uniform => uniform_action(threshold, rng),
        ActionMode::Deterministic => mean_action(&policy_forward(policy, obs)?, threshold),
        ActionMode::Stochastic => sample_action(&policy_forward(policy, obs)?, threshold, rng),
    })
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub record: EpisodeRecord,
    pub transitions: Vec<Transition>,
    pub trace: Option<Vec<TraceRow>>,
}

/// One landing episode on stream `(seed, stream)`. With `condition = None`
/// the approach is sampled from the stream.
pub fn run_episode(
    cfg: &EnvConfig,
    policy: &PolicyParams,
    mode: ActionMode,
    seed: u64,
    stream: u64,
    condition: Option<ApproachCondition>,
    record_trace: bool,
) -> Result<EpisodeOutput> {
    let mut rng = stream_rng(seed, stream);
    let (mut env, mut obs) = LandingEnv::reset(cfg, condition, &mut rng)?;
    if record_trace {
        env.enable_trace();
    }
    let th = cfg.episode.trigger_threshold;
    let mut transitions = Vec::new();
    loop {
        let o = obs.normalized(&cfg.sensing);
        let a = choose_action(policy, &o, mode, th, &mut rng)?;
        let r = env.step(&a)?;
        transitions.push(Transition {
            obs: o,
            raw_action: a.raw,
            action: a.squashed,
            reward: r.reward,
            next_obs: r.obs.normalized(&cfg.sensing),
            done: r.done,
            trigger: r.triggered,
        });
        obs = r.obs;
        if r.done {
            break;
        }
    }
    let mut record = *env
        .record()
        .ok_or_else(|| Error::InvalidState("episode ended without a record".into()))?;
    record.seed = seed;
    record.stream = stream;
    Ok(EpisodeOutput {
        record,
        transitions,
        trace: env.take_trace(),
    })
}
