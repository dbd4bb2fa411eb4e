//! Episode loop: collect with the current policy, store, update.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EpisodeRecord, Transition};
use crate::episode::{choose_action, run_episode, ActionMode};
use crate::error::{Error, Result};
use crate::learner::replay::ReplayBuffer;
use crate::learner::sac::{Sac, SacHyperparams, UpdateStats};
use crate::policy::PolicyParams;
use crate::rng::{stream_rng, StreamRng, LEARNER_STREAM};

/// Result of one episode of some task.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub record: Option<EpisodeRecord>,
    pub reward: f64,
}

pub trait Task: Sync {
    fn rollout(&self, policy: &PolicyParams, mode: ActionMode, seed: u64, stream: u64) -> Result<Rollout>;
}

/// The landing task with approach sampling and domain randomization.
#[derive(Debug, Clone, Copy, Default)]
pub struct LandingTask {
    pub cfg: EnvConfig,
}

impl Task for LandingTask {
    fn rollout(&self, policy: &PolicyParams, mode: ActionMode, seed: u64, stream: u64) -> Result<Rollout> {
        let out = run_episode(&self.cfg, policy, mode, seed, stream, None, false)?;
        Ok(Rollout {
            reward: out.record.reward.total,
            transitions: out.transitions,
            record: Some(out.record),
        })
    }
}

/// Diagnostic single-step task: a random observation, a forced trigger, and
/// reward `1 − |a_My − 0.5|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTask;

impl Task for ToyTask {
    fn rollout(&self, policy: &PolicyParams, mode: ActionMode, seed: u64, stream: u64) -> Result<Rollout> {
        let mut rng = stream_rng(seed, stream);
        let obs: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let a = choose_action(policy, &obs, mode, 0.0, &mut rng)?;
        let reward = 1.0 - (a.squashed[1] - 0.5).abs();
        Ok(Rollout {
            transitions: vec![Transition {
                obs,
                raw_action: a.raw,
                action: a.squashed,
                reward,
                next_obs: obs,
                done: true,
                trigger: true,
            }],
            record: None,
            reward,
        })
    }
}

/// One row of the training statistics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub warmup: bool,
    pub steps: usize,
    pub updates: usize,
    pub reward: f64,
    pub rolling_mean: f64,
    pub triggered: bool,
    pub n_legs: u8,
    /// Means over this episode's updates; zero when there were none.
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// `−mean logπ` of the last update batch.
    pub entropy: f64,
    pub beta: f64,
}

impl EpisodeStats {
    pub const CSV_HEADER: &'static str =
        "episode,warmup,steps,updates,reward,rolling_mean,triggered,n_legs,critic_loss,actor_loss,entropy,beta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.17e},{:.17e},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.episode,
            self.warmup as u8,
            self.steps,
            self.updates,
            self.reward,
            self.rolling_mean,
            self.triggered as u8,
            self.n_legs,
            self.critic_loss,
            self.actor_loss,
            self.entropy,
            self.beta
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trainer<T: Task> {
    pub task: T,
    pub sac: Sac,
    pub buffer: ReplayBuffer,
    pub seed: u64,
    rng: StreamRng,
    episode: usize,
    window: usize,
    recent: VecDeque<f64>,
    recent_sum: f64,
}

impl<T: Task> Trainer<T> {
    pub fn new(task: T, hp: SacHyperparams, seed: u64, rolling_window: usize) -> Result<Self> {
        hp.validate()?;
        if rolling_window == 0 {
            return Err(Error::InvalidParam("rolling window must be > 0".into()));
        }
        let mut rng = stream_rng(seed, LEARNER_STREAM);
        let sac = Sac::new(hp, &mut rng)?;
        Ok(Self {
            task,
            sac,
            buffer: ReplayBuffer::new(hp.buffer_capacity)?,
            seed,
            rng,
            episode: 0,
            window: rolling_window,
            recent: VecDeque::with_capacity(rolling_window),
            recent_sum: 0.0,
        })
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.sac.actor
    }

    fn rolling_push(&mut self, r: f64) -> f64 {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(r);
        // summed fresh to keep the mean independent of history
        self.recent_sum = self.recent.iter().sum();
        self.recent_sum / self.recent.len() as f64
    }

    /// Plays one episode on stream `episode index`, stores its transitions
    /// and runs the configured number of updates. A non-finite update
    /// restores the pre-episode learner state and reports divergence.
    pub fn run_episode(&mut self) -> Result<(EpisodeStats, Rollout)> {
        let hp = self.sac.hp;
        let warmup = self.episode < hp.warmup_episodes;
        let mode = if warmup { hp.warmup_mode } else { ActionMode::Stochastic };
        let roll = self.task.rollout(&self.sac.actor, mode, self.seed, self.episode as u64)?;
        if !roll.reward.is_finite() {
            return Err(Error::Diverged {
                episode: self.episode,
                detail: format!("non-finite episode reward {}", roll.reward),
            });
        }
        for t in &roll.transitions {
            self.buffer.push(*t);
        }
        let steps = roll.transitions.len();
        let mut n_updates = 0;
        let mut sum = UpdateStats::default();
        let mut last = UpdateStats {
            beta: self.sac.beta(),
            ..Default::default()
        };
        if !warmup && self.buffer.len() >= hp.batch_size {
            n_updates = ((steps as f64 * hp.updates_per_step).round() as usize).max(hp.min_updates_per_episode);
            let snapshot = self.sac.clone();
            for _ in 0..n_updates {
                let batch = self.buffer.sample(hp.batch_size, &mut self.rng)?;
                let noise_next = ndarray::Array2::from_shape_fn((hp.batch_size, 2), |_| {
                    self.rng.sample::<f64, _>(StandardNormal)
                });
                let noise_pi = ndarray::Array2::from_shape_fn((hp.batch_size, 2), |_| {
                    self.rng.sample::<f64, _>(StandardNormal)
                });
                match self.sac.update_with_noise(&batch, noise_next.view(), noise_pi.view()) {
                    Ok(s) => {
                        sum.critic_loss += s.critic_loss;
                        sum.actor_loss += s.actor_loss;
                        last = s;
                    }
                    Err(e) => {
                        self.sac = snapshot;
                        return Err(Error::Diverged {
                            episode: self.episode,
                            detail: e.to_string(),
                        });
                    }
                }
            }
        }
        let rolling_mean = self.rolling_push(roll.reward);
        let div = n_updates.max(1) as f64;
        let stats = EpisodeStats {
            episode: self.episode,
            warmup,
            steps,
            updates: n_updates,
            reward: roll.reward,
            rolling_mean,
            triggered: roll.transitions.last().is_some_and(|t| t.trigger),
            n_legs: roll.record.map(|r| r.outcome.n_legs).unwrap_or(0),
            critic_loss: sum.critic_loss / div,
            actor_loss: sum.actor_loss / div,
            entropy: if n_updates > 0 { -last.mean_log_prob } else { 0.0 },
            beta: last.beta,
        };
        self.episode += 1;
        Ok((stats, roll))
    }

    /// Runs `episodes` more episodes, calling `on_episode` after each.
    pub fn train<F>(&mut self, episodes: usize, mut on_episode: F) -> Result<Vec<EpisodeStats>>
    where
        F: FnMut(&EpisodeStats, &Rollout, &Self) -> Result<()>,
    {
        let mut all = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let (s, roll) = self.run_episode()?;
            on_episode(&s, &roll, self)?;
            all.push(s);
        }
        Ok(all)
    }
}

/// Mean deterministic-policy reward over `n` evaluation episodes.
pub fn evaluate_mean_reward<T: Task>(task: &T, policy: &PolicyParams, seed: u64, n: usize) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..n {
        sum += task
            .rollout(policy, ActionMode::Deterministic, seed, crate::rng::eval_stream(i))?
            .reward;
    }
    Ok(sum / n.max(1) as f64)
}
