//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! automatically tuned temperature β.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episode::ActionMode;
use crate::error::{Error, Result};
use crate::learner::replay::Batch;
use crate::nn::{Adam, Mlp, MlpGrad};
use crate::policy::{sample_batch, sample_output_grad, PolicyParams, ACTION_DIM, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacHyperparams {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub beta_lr: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Target averaging rate ρ.
    pub polyak: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Episodes collected before learning starts.
    pub warmup_episodes: usize,
    /// How warmup episodes choose actions.
    pub warmup_mode: ActionMode,
    /// Initial output bias of the trigger mean.
    pub initial_trigger_bias: f64,
    /// Gradient updates per collected transition.
    pub updates_per_step: f64,
    /// Lower bound on updates after each post-warmup episode.
    pub min_updates_per_episode: usize,
    pub initial_beta: f64,
    /// Tune β toward `target_entropy`; otherwise keep `initial_beta`.
    pub auto_beta: bool,
    /// nats. The usual −dim(A) let the trigger head collapse onto
    /// first-step flips on the landing task.
    pub target_entropy: f64,
}

impl Default for SacHyperparams {
    fn default() -> Self {
        Self {
            hidden: 64,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            beta_lr: 3e-4,
            gamma: 0.999,
            polyak: 0.05,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_episodes: 300,
            warmup_mode: ActionMode::Uniform,
            initial_trigger_bias: 0.0,
            updates_per_step: 1.0,
            min_updates_per_episode: 50,
            initial_beta: 1.0,
            auto_beta: true,
            target_entropy: 0.0,
        }
    }
}

impl SacHyperparams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("sac.actor_lr", self.actor_lr),
            ("sac.critic_lr", self.critic_lr),
            ("sac.beta_lr", self.beta_lr),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        // a fixed β may be zero; a tuned one lives in log space
        let beta_ok = if self.auto_beta { self.initial_beta > 0.0 } else { self.initial_beta >= 0.0 };
        if !(self.initial_beta.is_finite() && beta_ok) {
            return Err(Error::InvalidParam(format!(
                "sac.initial_beta must be > 0 (>= 0 with auto_beta off), got {}",
                self.initial_beta
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::OutOfRange(format!("sac.gamma {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::OutOfRange(format!("sac.polyak {} must lie in (0, 1]", self.polyak)));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::InvalidParam(
                "sac.hidden, sac.batch_size and sac.buffer_capacity must be > 0".into(),
            ));
        }
        if !(self.updates_per_step.is_finite() && self.updates_per_step >= 0.0) {
            return Err(Error::InvalidParam("sac.updates_per_step must be >= 0".into()));
        }
        if !self.initial_trigger_bias.is_finite() {
            return Err(Error::InvalidParam("sac.initial_trigger_bias must be finite".into()));
        }
        if !self.target_entropy.is_finite() {
            return Err(Error::InvalidParam("sac.target_entropy must be finite".into()));
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub beta: f64,
    pub mean_log_prob: f64,
    pub mean_q: f64,
}

pub fn critic_dims(hidden: usize) -> [usize; 4] {
    [OBS_DIM + ACTION_DIM, hidden, hidden, 1]
}

/// Critic input rows `[obs | action]`.
pub fn critic_input(obs: ArrayView2<f64>, action: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, action]).expect("row counts match")
}

/// `y = r + γ(1−d)·(min(Q1′, Q2′) − β·logπ′)`.
pub fn soft_targets(
    reward: &Array1<f64>,
    done: &Array1<f64>,
    q1_next: &Array1<f64>,
    q2_next: &Array1<f64>,
    log_prob_next: &Array1<f64>,
    gamma: f64,
    beta: f64,
) -> Array1<f64> {
    let mut y = Array1::zeros(reward.len());
    for i in 0..y.len() {
        let soft = q1_next[i].min(q2_next[i]) - beta * log_prob_next[i];
        y[i] = reward[i] + gamma * (1.0 - done[i]) * soft;
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sac {
    pub hp: SacHyperparams,
    pub actor: PolicyParams,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_beta: f64,
    pub actor_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub beta_opt: Adam,
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(hp: SacHyperparams, rng: &mut R) -> Result<Self> {
        hp.validate()?;
        let mut actor = PolicyParams::init(hp.hidden, rng);
        if let Some(last) = actor.net.layers.last_mut() {
            last.b[0] = hp.initial_trigger_bias;
        }
        let q1 = Mlp::init(&critic_dims(hp.hidden), rng);
        let q2 = Mlp::init(&critic_dims(hp.hidden), rng);
        Ok(Self::from_parts(hp, actor, q1, q2))
    }

    pub fn from_parts(hp: SacHyperparams, actor: PolicyParams, q1: Mlp, q2: Mlp) -> Self {
        Self {
            actor_opt: Adam::new(actor.net.param_count(), hp.actor_lr),
            q1_opt: Adam::new(q1.param_count(), hp.critic_lr),
            q2_opt: Adam::new(q2.param_count(), hp.critic_lr),
            beta_opt: Adam::new(1, hp.beta_lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_beta: hp.initial_beta.ln(),
            hp,
            actor,
            q1,
            q2,
        }
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn is_finite(&self) -> bool {
        // log β = −∞ encodes a fixed β of zero
        !self.log_beta.is_nan()
            && self.log_beta < f64::INFINITY
            && self.actor.net.is_finite()
            && self.q1.is_finite()
            && self.q2.is_finite()
            && self.q1_target.is_finite()
            && self.q2_target.is_finite()
    }

    /// Soft Bellman targets for a batch, using `noise` (B × 2) for the
    /// next-state action draw.
    pub fn critic_targets(&self, batch: &Batch, noise: ArrayView2<f64>) -> Array1<f64> {
        let out = self.actor.net.forward(batch.next_obs.view());
        let s = sample_batch(out, noise);
        let x = critic_input(batch.next_obs.view(), s.squashed.view());
        let q1 = self.q1_target.forward(x.view()).column(0).to_owned();
        let q2 = self.q2_target.forward(x.view()).column(0).to_owned();
        soft_targets(
            &batch.reward,
            &batch.done,
            &q1,
            &q2,
            &s.log_prob,
            self.hp.gamma,
            self.beta(),
        )
    }

    /// `½·mean((Q − y)²)` for one critic and its parameter gradient.
    pub fn critic_loss_and_grad(critic: &Mlp, x: ArrayView2<f64>, y: &Array1<f64>) -> (f64, MlpGrad) {
        let n = y.len() as f64;
        let (q, cache) = critic.forward_cached(x);
        let diff = &q.column(0) - y;
        let loss = 0.5 * diff.mapv(|d| d * d).sum() / n;
        let d_out = (diff / n).insert_axis(Axis(1));
        let (g, _) = critic.backward(&cache, d_out.view());
        (loss, g)
    }

    /// `mean(β·logπ(a|s) − min(Q1, Q2)(s, a))` with `a` reparameterized by
    /// `noise`, and its gradient with respect to the actor parameters.
    /// Also returns the mean log-probability and mean min-Q.
    pub fn actor_loss_and_grad(
        &self,
        obs: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> (f64, MlpGrad, f64, f64) {
        let n = obs.nrows();
        let nf = n as f64;
        let beta = self.beta();
        let (out, cache) = self.actor.net.forward_cached(obs);
        let s = sample_batch(out, noise);
        let x = critic_input(obs, s.squashed.view());
        let (q1, c1) = self.q1.forward_cached(x.view());
        let (q2, c2) = self.q2.forward_cached(x.view());
        let mut d1 = Array2::zeros((n, 1));
        let mut d2 = Array2::zeros((n, 1));
        let mut min_q = 0.0;
        for i in 0..n {
            // ties go to the first critic
            if q1[[i, 0]] <= q2[[i, 0]] {
                d1[[i, 0]] = -1.0 / nf;
                min_q += q1[[i, 0]];
            } else {
                d2[[i, 0]] = -1.0 / nf;
                min_q += q2[[i, 0]];
            }
        }
        let dx = self.q1.backward_input(&c1, d1.view()) + self.q2.backward_input(&c2, d2.view());
        let w_a = dx.slice(s![.., OBS_DIM..]);
        let w_lp = Array1::from_elem(n, beta / nf);
        let g_out = sample_output_grad(&s, noise, w_lp.view(), w_a);
        let (grad, _) = self.actor.net.backward(&cache, g_out.view());
        let mean_lp = s.log_prob.mean().unwrap_or(0.0);
        let mean_q = min_q / nf;
        (beta * mean_lp - mean_q, grad, mean_lp, mean_q)
    }

    /// Gradient of `−log β·(mean logπ + H_target)` with respect to log β.
    pub fn beta_grad(&self, mean_log_prob: f64) -> f64 {
        -(mean_log_prob + self.hp.target_entropy)
    }

    /// One full update from a sampled batch.
    pub fn update_with_noise(
        &mut self,
        batch: &Batch,
        noise_next: ArrayView2<f64>,
        noise_pi: ArrayView2<f64>,
    ) -> Result<UpdateStats> {
        let y = self.critic_targets(batch, noise_next);
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "critic target {} at batch row {i} (reward {}, done {})",
                y[i], batch.reward[i], batch.done[i]
            )));
        }
        let x = critic_input(batch.obs.view(), batch.action.view());
        let (l1, g1) = Self::critic_loss_and_grad(&self.q1, x.view(), &y);
        let (l2, g2) = Self::critic_loss_and_grad(&self.q2, x.view(), &y);
        self.q1_opt.step(&mut self.q1, &g1);
        self.q2_opt.step(&mut self.q2, &g2);

        let (actor_loss, ga, mean_lp, mean_q) = self.actor_loss_and_grad(batch.obs.view(), noise_pi);
        self.actor_opt.step(&mut self.actor.net, &ga);

        if self.hp.auto_beta {
            let g = self.beta_grad(mean_lp);
            self.beta_opt.step_scalar(&mut self.log_beta, g);
        }
        self.q1_target.soft_update_from(&self.q1, self.hp.polyak);
        self.q2_target.soft_update_from(&self.q2, self.hp.polyak);

        let stats = UpdateStats {
            critic_loss: l1 + l2,
            actor_loss,
            beta: self.beta(),
            mean_log_prob: mean_lp,
            mean_q,
        };
        if ![stats.critic_loss, stats.actor_loss, stats.beta, stats.mean_q]
            .iter()
            .all(|v| v.is_finite())
            || !self.is_finite()
        {
            return Err(Error::NonFinite(format!("learner update produced {stats:?}")));
        }
        Ok(stats)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let n = batch.len();
        let noise_next = Array2::from_shape_fn((n, ACTION_DIM), |_| rng.sample(StandardNormal));
        let noise_pi = Array2::from_shape_fn((n, ACTION_DIM), |_| rng.sample(StandardNormal));
        self.update_with_noise(batch, noise_next.view(), noise_pi.view())
    }
}
