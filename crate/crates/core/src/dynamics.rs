//! Planar (x, z, pitch) quadrotor dynamics.
//!
//! The world frame has `x` forward and `z` up. Pitch is measured
//! counter-clockwise in the x–z plane, so a positive pitch rate lifts the
//! nose. The body thrust axis points along `(-sin θ, cos θ)`. The front rotor
//! pair sits at `+arm_length` along the body x-axis, the rear pair at
//! `-arm_length`; the pitch moment is `arm_length · (F_front − F_rear)`.
//!
//! Rotor thrust is proportional to the normalized pair speed, and each pair
//! speed follows a first-order lag toward its command.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Upper bound of the flip moment command, N·m.
pub const MAX_FLIP_MOMENT: f64 = 8.0e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Pitch-axis moment of inertia, kg·m².
    pub inertia_yy: f64,
    /// Rotor offset from the center of mass along body x, m. Also the lever
    /// arm converting differential pair thrust into pitch moment.
    pub arm_length: f64,
    /// Thrust of one rotor pair at full normalized speed, N.
    pub max_thrust_per_pair: f64,
    /// First-order motor time constant, s.
    pub motor_time_constant: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 34.3e-3,
            inertia_yy: 1.65e-5,
            arm_length: 33.0e-3,
            max_thrust_per_pair: 0.30,
            motor_time_constant: 0.030,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vehicle.mass", self.mass),
            ("vehicle.inertia_yy", self.inertia_yy),
            ("vehicle.arm_length", self.arm_length),
            ("vehicle.max_thrust_per_pair", self.max_thrust_per_pair),
            ("vehicle.motor_time_constant", self.motor_time_constant),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Normalized speed per pair that balances gravity at level attitude.
    pub fn hover_speed(&self, gravity: f64) -> f64 {
        self.mass * gravity / (2.0 * self.max_thrust_per_pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    /// Height of the ceiling plane, m.
    pub ceiling_height: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            ceiling_height: 2.5,
            gravity: 9.81,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("world.ceiling_height", self.ceiling_height)?;
        ensure_finite("world.gravity", self.gravity)?;
        if self.ceiling_height <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "world.ceiling_height must be > 0, got {}",
                self.ceiling_height
            )));
        }
        if self.gravity < 0.0 {
            return Err(Error::InvalidParam("world.gravity must be >= 0".into()));
        }
        Ok(())
    }
}

/// Normalized rotor-pair speeds in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub front: f64,
    pub rear: f64,
}

/// Normalized rotor-pair speed commands in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairCommands {
    pub front: f64,
    pub rear: f64,
}

impl PairCommands {
    pub const OFF: PairCommands = PairCommands { front: 0.0, rear: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
    /// rad, wrapped to (−π, π]
    pub pitch: f64,
    /// rad/s
    pub pitch_rate: f64,
    pub motors: MotorState,
    pub time: f64,
}

impl RigidBodyState {
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("state.x", self.x),
            ("state.z", self.z),
            ("state.vx", self.vx),
            ("state.vz", self.vz),
            ("state.pitch", self.pitch),
            ("state.pitch_rate", self.pitch_rate),
            ("state.motors.front", self.motors.front),
            ("state.motors.rear", self.motors.rear),
            ("state.time", self.time),
        ] {
            ensure_finite(name, v)?;
        }
        Ok(())
    }

    /// World-frame position of a body-frame point.
    pub fn body_to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.pitch.sin_cos();
        [self.x + p[0] * c - p[1] * s, self.z + p[0] * s + p[1] * c]
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Exact first-order motor update.
pub fn motor_step(
    motors: MotorState,
    command: PairCommands,
    dt: f64,
    params: &VehicleParams,
) -> Result<MotorState> {
    for (name, v) in [
        ("motors.front", motors.front),
        ("motors.rear", motors.rear),
        ("command.front", command.front),
        ("command.rear", command.rear),
        ("dt", dt),
    ] {
        ensure_finite(name, v)?;
    }
    if dt < 0.0 {
        return Err(Error::InvalidParam(format!("dt must be >= 0, got {dt}")));
    }
    check_command(command)?;
    let gain = -(-dt / params.motor_time_constant).exp_m1();
    Ok(MotorState {
        front: motors.front + (command.front - motors.front) * gain,
        rear: motors.rear + (command.rear - motors.rear) * gain,
    })
}

fn check_command(command: PairCommands) -> Result<()> {
    for (name, v) in [("command.front", command.front), ("command.rear", command.rear)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} not in [0, 1]")));
        }
    }
    Ok(())
}

type Kinematic = [f64; 6];

/// Time derivative of `[x, z, vx, vz, pitch, pitch_rate]` with the given pair
/// thrusts.
fn derivative(
    y: &Kinematic,
    thrust_front: f64,
    thrust_rear: f64,
    params: &VehicleParams,
    gravity: f64,
) -> Kinematic {
    let total = thrust_front + thrust_rear;
    let moment = params.arm_length * (thrust_front - thrust_rear);
    let (s, c) = y[4].sin_cos();
    [
        y[2],
        y[3],
        -total * s / params.mass,
        total * c / params.mass - gravity,
        y[5],
        moment / params.inertia_yy,
    ]
}

fn axpy(y: &Kinematic, k: &Kinematic, h: f64) -> Kinematic {
    let mut out = *y;
    for i in 0..6 {
        out[i] += h * k[i];
    }
    out
}

/// Advances the free-flight state by one fixed RK4 step of length `dt`.
///
/// Rotor thrust inside the step follows the exact motor response, so the
/// integrator sees the same thrust history that `motor_step` produces at the
/// end of the step.
pub fn step_free_flight(
    state: &RigidBodyState,
    command: PairCommands,
    params: &VehicleParams,
    world: &WorldParams,
    dt: f64,
) -> Result<RigidBodyState> {
    state.check_finite()?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::InvalidParam(format!("dt must be > 0, got {dt}")));
    }
    check_command(command)?;

    let tau = params.motor_time_constant;
    let fmax = params.max_thrust_per_pair;
    let m0 = state.motors;
    let thrust_at = |s: f64| {
        let decay = (-s / tau).exp();
        (
            fmax * (command.front + (m0.front - command.front) * decay),
            fmax * (command.rear + (m0.rear - command.rear) * decay),
        )
    };
    let g = world.gravity;
    let y0: Kinematic = [
        state.x,
        state.z,
        state.vx,
        state.vz,
        state.pitch,
        state.pitch_rate,
    ];
    let (f0, r0) = thrust_at(0.0);
    let (fh, rh) = thrust_at(0.5 * dt);
    let (f1, r1) = thrust_at(dt);
    let k1 = derivative(&y0, f0, r0, params, g);
    let k2 = derivative(&axpy(&y0, &k1, 0.5 * dt), fh, rh, params, g);
    let k3 = derivative(&axpy(&y0, &k2, 0.5 * dt), fh, rh, params, g);
    let k4 = derivative(&axpy(&y0, &k3, dt), f1, r1, params, g);
    let mut y = y0;
    for i in 0..6 {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    let next = RigidBodyState {
        x: y[0],
        z: y[1],
        vx: y[2],
        vz: y[3],
        pitch: wrap_angle(y[4]),
        pitch_rate: y[5],
        motors: motor_step(m0, command, dt, params)?,
        time: state.time + dt,
    };
    next.check_finite()?;
    Ok(next)
}

/// Front-pair command that realizes a steady pitch moment with the rear pair
/// off.
pub fn front_command_for_moment(moment: f64, params: &VehicleParams) -> f64 {
    (moment / (params.arm_length * params.max_thrust_per_pair)).clamp(0.0, 1.0)
}

fn check_moment(moment: f64) -> Result<()> {
    ensure_finite("flip moment", moment)?;
    if !(0.0..=MAX_FLIP_MOMENT).contains(&moment) {
        return Err(Error::OutOfRange(format!(
            "flip moment {moment} N·m not in [0, {MAX_FLIP_MOMENT}]"
        )));
    }
    Ok(())
}

/// Open-loop flip law: front pair only until the body has rotated 90° since
/// the trigger, all motors off afterwards.
pub fn flip_commands(
    rotation_since_trigger: f64,
    moment: f64,
    params: &VehicleParams,
) -> Result<PairCommands> {
    check_moment(moment)?;
    if rotation_since_trigger.abs() >= FRAC_PI_2 {
        return Ok(PairCommands::OFF);
    }
    Ok(PairCommands {
        front: front_command_for_moment(moment, params),
        rear: 0.0,
    })
}

/// Stateful wrapper around [`flip_commands`] that tracks the unwrapped
/// rotation since the trigger and latches the motor cut.
#[derive(Debug, Clone)]
pub struct FlipController {
    moment: f64,
    rotation: f64,
    last_pitch: f64,
    cut: bool,
}

impl FlipController {
    pub fn new(trigger_state: &RigidBodyState, moment: f64) -> Result<Self> {
        check_moment(moment)?;
        Ok(Self {
            moment,
            rotation: 0.0,
            last_pitch: trigger_state.pitch,
            cut: false,
        })
    }

    pub fn commands(&mut self, state: &RigidBodyState, params: &VehicleParams) -> PairCommands {
        self.rotation += wrap_angle(state.pitch - self.last_pitch);
        self.last_pitch = state.pitch;
        if self.cut || self.rotation.abs() >= FRAC_PI_2 {
            self.cut = true;
            return PairCommands::OFF;
        }
        // moment was range-checked in new()
        flip_commands(self.rotation, self.moment, params).unwrap_or(PairCommands::OFF)
    }

    /// Unwrapped rotation since the trigger, rad.
    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn motors_cut(&self) -> bool {
        self.cut
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest() -> RigidBodyState {
        RigidBodyState::default()
    }

    #[test]
    fn motor_steady_state_is_fixed_point() {
        let p = VehicleParams::default();
        let m = MotorState { front: 0.7, rear: 0.7 };
        let c = PairCommands { front: 0.7, rear: 0.7 };
        for dt in [1e-4, 0.01, 1.0] {
            assert_eq!(motor_step(m, c, dt, &p).unwrap(), m);
        }
    }

    #[test]
    fn motor_one_time_constant() {
        let p = VehicleParams::default();
        let m = motor_step(
            MotorState::default(),
            PairCommands { front: 1.0, rear: 1.0 },
            p.motor_time_constant,
            &p,
        )
        .unwrap();
        let expect = 1.0 - (-1.0f64).exp();
        assert!((m.front - expect).abs() < 1e-15);
        assert!((m.front - 0.6321).abs() < 1e-4);
    }

    #[test]
    fn motor_zero_step_is_identity() {
        let p = VehicleParams::default();
        let m = MotorState { front: 0.3, rear: 0.3 };
        let out = motor_step(m, PairCommands { front: 1.0, rear: 1.0 }, 0.0, &p).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn motor_rejects_nan() {
        let p = VehicleParams::default();
        let m = MotorState { front: f64::NAN, rear: 0.0 };
        assert!(matches!(
            motor_step(m, PairCommands::OFF, 0.01, &p),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn free_fall_tenth_second() {
        let p = VehicleParams::default();
        let w = WorldParams::default();
        let mut s = rest();
        for _ in 0..100 {
            s = step_free_flight(&s, PairCommands::OFF, &p, &w, 1e-3).unwrap();
        }
        assert!((s.vz + 0.981).abs() < 1e-12);
        assert!((s.z + 0.04905).abs() < 1e-12);
    }

    #[test]
    fn hover_balance() {
        let p = VehicleParams::default();
        let w = WorldParams::default();
        let h = p.hover_speed(w.gravity);
        let mut s = rest();
        s.motors = MotorState { front: h, rear: h };
        let out = step_free_flight(&s, PairCommands { front: h, rear: h }, &p, &w, 1e-3).unwrap();
        assert!(out.vz.abs() < 1e-14);
        assert!(out.vx.abs() < 1e-14);
        assert_eq!(out.pitch_rate, 0.0);
    }

    #[test]
    fn nan_state_names_field() {
        let p = VehicleParams::default();
        let w = WorldParams::default();
        let mut s = rest();
        s.vx = f64::INFINITY;
        let err = step_free_flight(&s, PairCommands::OFF, &p, &w, 1e-3).unwrap_err();
        assert!(err.to_string().contains("state.vx"), "{err}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-16);
    }

    #[test]
    fn flip_law_front_pair_only_until_ninety_degrees() {
        let p = VehicleParams::default();
        let my = 5e-3;
        let c = flip_commands(30f64.to_radians(), my, &p).unwrap();
        assert!((c.front - my / (p.arm_length * p.max_thrust_per_pair)).abs() < 1e-15);
        assert_eq!(c.rear, 0.0);
        assert_eq!(flip_commands(95f64.to_radians(), my, &p).unwrap(), PairCommands::OFF);
        for deg in [0.0, 30.0, 120.0] {
            assert_eq!(
                flip_commands(f64::to_radians(deg), 0.0, &p).unwrap(),
                PairCommands::OFF
            );
        }
        assert!(flip_commands(0.0, 9e-3, &p).is_err());
        assert!(flip_commands(0.0, -1e-4, &p).is_err());
    }

    #[test]
    fn flip_controller_latches_cut() {
        let p = VehicleParams::default();
        let mut s = rest();
        let mut ctl = FlipController::new(&s, MAX_FLIP_MOMENT).unwrap();
        assert!(ctl.commands(&s, &p).front > 0.0);
        s.pitch = 100f64.to_radians();
        assert_eq!(ctl.commands(&s, &p), PairCommands::OFF);
        s.pitch = 10f64.to_radians();
        assert_eq!(ctl.commands(&s, &p), PairCommands::OFF);
        assert!(ctl.motors_cut());
    }

    #[test]
    fn flip_controller_tracks_across_wrap() {
        let p = VehicleParams::default();
        let mut s = rest();
        s.pitch = 170f64.to_radians();
        let mut ctl = FlipController::new(&s, 1e-3).unwrap();
        s.pitch = wrap_angle(200f64.to_radians());
        ctl.commands(&s, &p);
        assert!((ctl.rotation() - 30f64.to_radians()).abs() < 1e-12);
        assert!(!ctl.motors_cut());
    }
}
