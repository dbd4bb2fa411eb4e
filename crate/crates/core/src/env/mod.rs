//! Episode orchestration: approach sampling, inertial randomization, the
//! 100 Hz observation/action loop, and the open-loop flip rollout that ends
//! every triggered episode.

pub mod reward;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{
    attach_pin, classify_outcome, clearance, detect_crossing, refine_crossing, ContactEvent,
    ContactKind, EpisodeTrace, LandingOutcome, LegGeometry, TriggerInfo, CONTACT_TOL,
};
use crate::dynamics::{
    step_free_flight, wrap_angle, FlipController, PairCommands, RigidBodyState, VehicleParams,
    WorldParams,
};
use crate::error::{Error, Result};
use crate::policy::ActionSample;
use crate::rng::StreamRng;
use crate::sensing::{observe_noisy, Observation, SensingConfig};

pub use reward::{episode_reward, RewardComponents, RewardParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachCondition {
    /// m/s
    pub speed: f64,
    /// Flight angle above the horizon, deg.
    pub angle_deg: f64,
}

impl ApproachCondition {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::InvalidParam(format!("approach speed {} must be > 0", self.speed)));
        }
        if !(self.angle_deg > 0.0 && self.angle_deg <= 90.0) {
            return Err(Error::InvalidParam(format!(
                "flight angle {} deg must lie in (0, 90]",
                self.angle_deg
            )));
        }
        Ok(())
    }

    pub fn velocity(&self) -> (f64, f64) {
        let phi = self.angle_deg.to_radians();
        (self.speed * phi.cos(), self.speed * phi.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Physics step, s.
    pub physics_dt: f64,
    /// Policy period, s. Must be a whole number of physics steps.
    pub control_period: f64,
    /// Episodes that never trigger end after this long, s.
    pub approach_timeout: f64,
    /// Limit on the free flight after the trigger, s.
    pub post_trigger_timeout: f64,
    /// Limit on the pinned swing, s.
    pub swing_timeout: f64,
    /// Launch speed range, m/s.
    pub speed_range: [f64; 2],
    /// Launch flight-angle range, deg.
    pub angle_range_deg: [f64; 2],
    /// Mass randomization standard deviation, kg.
    pub mass_std: f64,
    /// Pitch inertia randomization standard deviation, kg·m².
    pub inertia_std: f64,
    /// Start distance is `max(min_start_distance, start_lead_time·vz + start_margin)`, m.
    pub min_start_distance: f64,
    /// s
    pub start_lead_time: f64,
    /// m
    pub start_margin: f64,
    /// Squashed-space trigger threshold.
    pub trigger_threshold: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            physics_dt: 1e-3,
            control_period: 1e-2,
            approach_timeout: 3.0,
            post_trigger_timeout: 1.5,
            swing_timeout: 1.0,
            speed_range: [1.5, 3.5],
            angle_range_deg: [30.0, 90.0],
            mass_std: 0.5e-3,
            inertia_std: 1.5e-6,
            min_start_distance: 1.0,
            start_lead_time: 0.5,
            start_margin: 0.3,
            trigger_threshold: 0.0,
        }
    }
}

impl EpisodeConfig {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn start_distance(&self, condition: &ApproachCondition) -> f64 {
        let (_, vz) = condition.velocity();
        self.min_start_distance
            .max(self.start_lead_time * vz + self.start_margin)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episode.physics_dt", self.physics_dt),
            ("episode.control_period", self.control_period),
            ("episode.approach_timeout", self.approach_timeout),
            ("episode.post_trigger_timeout", self.post_trigger_timeout),
            ("episode.swing_timeout", self.swing_timeout),
            ("episode.min_start_distance", self.min_start_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        let steps = self.control_period / self.physics_dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(Error::InvalidParam(
                "episode.control_period must be a whole number of physics steps".into(),
            ));
        }
        let [v0, v1] = self.speed_range;
        if !(v0 > 0.0 && v1 >= v0) {
            return Err(Error::InvalidParam("episode.speed_range must satisfy 0 < lo <= hi".into()));
        }
        let [a0, a1] = self.angle_range_deg;
        if !(a0 > 0.0 && a1 >= a0 && a1 <= 90.0) {
            return Err(Error::InvalidParam(
                "episode.angle_range_deg must satisfy 0 < lo <= hi <= 90".into(),
            ));
        }
        if !(self.mass_std >= 0.0 && self.inertia_std >= 0.0) {
            return Err(Error::InvalidParam("randomization std must be >= 0".into()));
        }
        if !(self.start_lead_time >= 0.0 && self.start_margin >= 0.0) {
            return Err(Error::InvalidParam("start lead/margin must be >= 0".into()));
        }
        if !(self.trigger_threshold.abs() < 1.0) {
            return Err(Error::OutOfRange("episode.trigger_threshold must lie in (-1, 1)".into()));
        }
        Ok(())
    }
}

/// Everything an episode needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub vehicle: VehicleParams,
    pub world: WorldParams,
    pub legs: LegGeometry,
    pub sensing: SensingConfig,
    pub reward: RewardParams,
    pub episode: EpisodeConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.world.validate()?;
        self.legs.validate()?;
        self.sensing.validate()?;
        self.reward.validate()?;
        self.episode.validate()?;
        let hover = self.vehicle.hover_speed(self.world.gravity);
        if hover > 1.0 {
            return Err(Error::InvalidParam(format!(
                "vehicle cannot hover: needs normalized pair speed {hover:.3}"
            )));
        }
        Ok(())
    }
}

pub fn sample_approach<R: Rng + ?Sized>(ep: &EpisodeConfig, rng: &mut R) -> ApproachCondition {
    let [v0, v1] = ep.speed_range;
    let [a0, a1] = ep.angle_range_deg;
    ApproachCondition {
        speed: v0 + (v1 - v0) * rng.random::<f64>(),
        angle_deg: a0 + (a1 - a0) * rng.random::<f64>(),
    }
}

fn positive_normal<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let dist = Normal::new(mean, std).expect("std is finite and positive");
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Per-episode mass and pitch inertia, Gaussian around the nominal values
/// and re-drawn until positive.
pub fn randomize_inertia<R: Rng + ?Sized>(
    nominal: &VehicleParams,
    mass_std: f64,
    inertia_std: f64,
    rng: &mut R,
) -> VehicleParams {
    let mass = positive_normal(nominal.mass, mass_std, rng);
    let inertia_yy = positive_normal(nominal.inertia_yy, inertia_std, rng);
    VehicleParams {
        mass,
        inertia_yy,
        ..*nominal
    }
}

/// One replay-buffer entry. Observations are stored normalized, actions
/// squashed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; 3],
    pub raw_action: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: [f64; 3],
    pub done: bool,
    pub trigger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub stream: u64,
    /// Whether the condition was drawn from the episode stream rather than
    /// supplied by the caller.
    pub condition_sampled: bool,
    pub condition: ApproachCondition,
    pub mass: f64,
    pub inertia_yy: f64,
    pub trigger_obs: Option<Observation>,
    /// Flip moment, N·m.
    pub moment: Option<f64>,
    pub outcome: LandingOutcome,
    pub reward: RewardComponents,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Flip,
    Swing,
}

/// One row of a per-step state trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub phase: Phase,
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub tau: Option<f64>,
    pub theta_x: Option<f64>,
    pub d_ceil: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub triggered: bool,
}

#[derive(Debug, Clone)]
pub struct LandingEnv {
    cfg: EnvConfig,
    params: VehicleParams,
    condition: ApproachCondition,
    condition_sampled: bool,
    state: RigidBodyState,
    obs: Observation,
    trace: EpisodeTrace,
    trigger: Option<(Observation, f64)>,
    steps: usize,
    done: bool,
    record: Option<EpisodeRecord>,
    noise_rng: StreamRng,
    rows: Option<Vec<TraceRow>>,
}

impl LandingEnv {
    /// Starts an episode. With `condition = None` the launch condition is
    /// drawn from `rng`; the mass and inertia are always randomized from it.
    pub fn reset<R: Rng + ?Sized>(
        cfg: &EnvConfig,
        condition: Option<ApproachCondition>,
        rng: &mut R,
    ) -> Result<(Self, Observation)> {
        cfg.validate()?;
        let condition_sampled = condition.is_none();
        let condition = match condition {
            Some(c) => c,
            None => sample_approach(&cfg.episode, rng),
        };
        condition.validate()?;
        let params = randomize_inertia(
            &cfg.vehicle,
            cfg.episode.mass_std,
            cfg.episode.inertia_std,
            rng,
        );
        let noise_rng = StreamRng::seed_from_u64(rng.random());
        Self::start(cfg, condition, condition_sampled, params, noise_rng)
    }

    /// Starts an episode with explicit vehicle parameters and no
    /// randomization.
    pub fn reset_with(
        cfg: &EnvConfig,
        condition: ApproachCondition,
        params: VehicleParams,
    ) -> Result<(Self, Observation)> {
        cfg.validate()?;
        condition.validate()?;
        params.validate()?;
        Self::start(cfg, condition, false, params, StreamRng::seed_from_u64(0))
    }

    fn start(
        cfg: &EnvConfig,
        condition: ApproachCondition,
        condition_sampled: bool,
        params: VehicleParams,
        mut noise_rng: StreamRng,
    ) -> Result<(Self, Observation)> {
        let (vx, vz) = condition.velocity();
        let hover = params.hover_speed(cfg.world.gravity);
        if hover > 1.0 {
            return Err(Error::InvalidParam("randomized vehicle cannot hover".into()));
        }
        let state = RigidBodyState {
            x: 0.0,
            z: cfg.world.ceiling_height - cfg.episode.start_distance(&condition),
            vx,
            vz,
            pitch: 0.0,
            pitch_rate: 0.0,
            motors: crate::dynamics::MotorState {
                front: hover,
                rear: hover,
            },
            time: 0.0,
        };
        let obs = observe_noisy(&state, &cfg.world, &cfg.sensing, &mut noise_rng)?;
        let trace = EpisodeTrace {
            d_min: clearance(&state, &cfg.legs, &cfg.world),
            ..Default::default()
        };
        let env = Self {
            cfg: *cfg,
            params,
            condition,
            condition_sampled,
            state,
            obs,
            trace,
            trigger: None,
            steps: 0,
            done: false,
            record: None,
            noise_rng,
            rows: None,
        };
        Ok((env, obs))
    }

    /// Records a per-step state trace from now on.
    pub fn enable_trace(&mut self) {
        self.rows = Some(vec![self.row(Phase::Approach, true)]);
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceRow>> {
        self.rows.take()
    }

    pub fn state(&self) -> &RigidBodyState {
        &self.state
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn condition(&self) -> &ApproachCondition {
        &self.condition
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn contact_trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn record(&self) -> Option<&EpisodeRecord> {
        self.record.as_ref()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn row(&self, phase: Phase, with_obs: bool) -> TraceRow {
        let s = &self.state;
        let obs = if with_obs {
            crate::sensing::observe(s, &self.cfg.world, &self.cfg.sensing).ok()
        } else {
            None
        };
        TraceRow {
            time: s.time,
            phase,
            x: s.x,
            z: s.z,
            vx: s.vx,
            vz: s.vz,
            pitch: s.pitch,
            pitch_rate: s.pitch_rate,
            tau: obs.map(|o| o.tau),
            theta_x: obs.map(|o| o.theta_x),
            d_ceil: obs.map(|o| o.d_ceil),
        }
    }

    fn push_row(&mut self, phase: Phase) {
        if self.rows.is_some() {
            let r = self.row(phase, phase != Phase::Swing);
            if let Some(rows) = self.rows.as_mut() {
                rows.push(r);
            }
        }
    }

    fn trim(&self) -> PairCommands {
        let h = self.params.hover_speed(self.cfg.world.gravity);
        PairCommands { front: h, rear: h }
    }

    fn observe_or_last(&mut self) -> Observation {
        observe_noisy(&self.state, &self.cfg.world, &self.cfg.sensing, &mut self.noise_rng)
            .unwrap_or(self.obs)
    }

    /// Advances one policy period.
    ///
    /// Without a trigger the vehicle coasts at constant velocity and the
    /// reward is zero, unless the ceiling or the timeout ends the episode.
    /// A trigger rolls the flip, contact, and swing out to termination and
    /// returns the whole episode reward on this transition.
    pub fn step(&mut self, action: &ActionSample) -> Result<StepResult> {
        if self.done {
            return Err(Error::InvalidState("step called after the episode ended".into()));
        }
        self.steps += 1;
        if action.trigger {
            self.trigger = Some((self.obs, action.moment));
            self.run_flip(action.moment)?;
            let obs = self.observe_or_last();
            let reward = self.finish()?;
            self.obs = obs;
            return Ok(StepResult {
                obs,
                reward,
                done: true,
                triggered: true,
            });
        }

        let trim = self.trim();
        let dt = self.cfg.episode.physics_dt;
        for _ in 0..self.cfg.episode.substeps() {
            let next = step_free_flight(&self.state, trim, &self.params, &self.cfg.world, dt)?;
            if let Some((ev, _)) = detect_crossing(&self.state, &next, &self.cfg.legs, &self.cfg.world) {
                let (at, ev) = refine_crossing(
                    &self.state,
                    trim,
                    ev.kind,
                    dt,
                    &self.params,
                    &self.cfg.legs,
                    &self.cfg.world,
                )?;
                self.state = at;
                self.trace.events.push(ev);
                self.trace.d_min = 0.0;
                self.push_row(Phase::Approach);
                let obs = self.observe_or_last();
                let reward = self.finish()?;
                self.obs = obs;
                return Ok(StepResult {
                    obs,
                    reward,
                    done: true,
                    triggered: false,
                });
            }
            self.state = next;
            self.trace.d_min = self
                .trace
                .d_min
                .min(clearance(&self.state, &self.cfg.legs, &self.cfg.world));
        }
        self.push_row(Phase::Approach);
        self.obs = observe_noisy(&self.state, &self.cfg.world, &self.cfg.sensing, &mut self.noise_rng)?;
        if self.state.time >= self.cfg.episode.approach_timeout - 1e-9 {
            let reward = self.finish()?;
            return Ok(StepResult {
                obs: self.obs,
                reward,
                done: true,
                triggered: false,
            });
        }
        Ok(StepResult {
            obs: self.obs,
            reward: 0.0,
            done: false,
            triggered: false,
        })
    }

    fn run_flip(&mut self, moment: f64) -> Result<()> {
        let mut ctl = FlipController::new(&self.state, moment)?;
        let (legs, world) = (self.cfg.legs, self.cfg.world);
        let dt = self.cfg.episode.physics_dt;
        let reach = legs.reach();
        let t0 = self.state.time;
        loop {
            let cmd = ctl.commands(&self.state, &self.params);
            let next = step_free_flight(&self.state, cmd, &self.params, &world, dt)?;
            if let Some((ev, _)) = detect_crossing(&self.state, &next, &legs, &world) {
                let (at, ev) =
                    refine_crossing(&self.state, cmd, ev.kind, dt, &self.params, &legs, &world)?;
                self.state = at;
                self.trace.events.push(ev);
                self.trace.d_min = 0.0;
                self.push_row(Phase::Flip);
                if ev.kind == ContactKind::ForeLegs {
                    self.run_swing(&ev)?;
                }
                return Ok(());
            }
            self.state = next;
            self.trace.d_min = self.trace.d_min.min(clearance(&self.state, &legs, &world));
            self.push_row(Phase::Flip);
            // Once falling with the motors off, no feature can come closer
            // than the center-of-mass distance minus the reach.
            let receding = ctl.motors_cut()
                && self.state.vz < 0.0
                && world.ceiling_height - self.state.z - reach > self.trace.d_min;
            if receding || self.state.time - t0 >= self.cfg.episode.post_trigger_timeout {
                return Ok(());
            }
        }
    }

    fn run_swing(&mut self, ev: &ContactEvent) -> Result<()> {
        let (legs, world) = (self.cfg.legs, self.cfg.world);
        let dt = self.cfg.episode.physics_dt;
        let mut pin = attach_pin(ev, &self.state, &self.params)?;
        self.trace.swing.push(pin);
        let t0 = pin.time;
        let h = world.ceiling_height;
        while pin.swing_rate > 0.0 && pin.time - t0 < self.cfg.episode.swing_timeout {
            let next = crate::contact::step_pinned(&pin, &self.params, &world, dt)?;
            self.trace.swing.push(next);
            self.state = next.to_body_state();
            self.push_row(Phase::Swing);
            let hind = next.hind_tip_world(&legs);
            if hind[1] >= h - CONTACT_TOL {
                self.trace.events.push(ContactEvent {
                    kind: ContactKind::HindLegs,
                    time: next.time,
                    body_pitch_at_contact: wrap_angle(next.swing_angle),
                    contact_point_world: [hind[0], h],
                });
                break;
            }
            let top = next.body_top(&legs);
            if top[1] >= h - CONTACT_TOL {
                self.trace.events.push(ContactEvent {
                    kind: ContactKind::Body,
                    time: next.time,
                    body_pitch_at_contact: wrap_angle(next.swing_angle),
                    contact_point_world: [top[0], h],
                });
                break;
            }
            pin = next;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<f64> {
        self.done = true;
        self.trace.terminated = true;
        let info = TriggerInfo {
            triggered: self.trigger.is_some(),
            tau: self.trigger.map(|(o, _)| o.tau).unwrap_or(0.0),
        };
        let outcome = classify_outcome(&self.trace, &info)?;
        let reward = episode_reward(&outcome, &self.cfg.reward)?;
        self.record = Some(EpisodeRecord {
            seed: 0,
            stream: 0,
            condition_sampled: self.condition_sampled,
            condition: self.condition,
            mass: self.params.mass,
            inertia_yy: self.params.inertia_yy,
            trigger_obs: self.trigger.map(|(o, _)| o),
            moment: self.trigger.map(|(_, m)| m),
            outcome,
            reward,
            steps: self.steps,
        });
        Ok(reward.total)
    }
}
