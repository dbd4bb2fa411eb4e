//! Leg geometry, ceiling contact, and the pinned swing after the fore legs
//! attach.
//!
//! Each planar leg stands for a left/right pair. Legs hang below the body
//! plane, splayed fore and aft by `mount_angle` measured from the body's
//! downward normal. The body and propellers are a circle of `body_radius`
//! around the center of mass.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_free_flight, PairCommands, RigidBodyState, VehicleParams, WorldParams};
use crate::error::{ensure_finite, Error, Result};

/// Height tolerance for "touching" the ceiling plane, m.
pub const CONTACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    /// Body-frame mount point of the fore legs, (x, z) m.
    pub fore_attach: [f64; 2],
    /// Body-frame mount point of the hind legs, (x, z) m.
    pub hind_attach: [f64; 2],
    /// m
    pub leg_length: f64,
    /// Splay from the body's downward normal, rad.
    pub mount_angle: f64,
    /// Radius of the body/propeller collision circle, m.
    pub body_radius: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        // Narrow-Long configuration
        Self {
            fore_attach: [0.020, 0.0],
            hind_attach: [-0.020, 0.0],
            leg_length: 0.050,
            mount_angle: 25f64.to_radians(),
            body_radius: 0.045,
        }
    }
}

impl LegGeometry {
    pub fn fore_tip(&self) -> [f64; 2] {
        let (s, c) = self.mount_angle.sin_cos();
        [
            self.fore_attach[0] + self.leg_length * s,
            self.fore_attach[1] - self.leg_length * c,
        ]
    }

    pub fn hind_tip(&self) -> [f64; 2] {
        let (s, c) = self.mount_angle.sin_cos();
        [
            self.hind_attach[0] - self.leg_length * s,
            self.hind_attach[1] - self.leg_length * c,
        ]
    }

    /// Largest distance from the center of mass to any contact feature.
    pub fn reach(&self) -> f64 {
        let f = self.fore_tip();
        let h = self.hind_tip();
        f[0].hypot(f[1]).max(h[0].hypot(h[1])).max(self.body_radius)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("legs.fore_attach.x", self.fore_attach[0]),
            ("legs.fore_attach.z", self.fore_attach[1]),
            ("legs.hind_attach.x", self.hind_attach[0]),
            ("legs.hind_attach.z", self.hind_attach[1]),
            ("legs.leg_length", self.leg_length),
            ("legs.mount_angle", self.mount_angle),
            ("legs.body_radius", self.body_radius),
        ] {
            ensure_finite(name, v)?;
        }
        if self.leg_length <= 0.0 {
            return Err(Error::InvalidParam("legs.leg_length must be > 0".into()));
        }
        if self.body_radius <= 0.0 {
            return Err(Error::InvalidParam("legs.body_radius must be > 0".into()));
        }
        let (f, h) = (self.fore_tip(), self.hind_tip());
        if (f[0] - h[0]).hypot(f[1] - h[1]) < 1e-9 {
            return Err(Error::InvalidParam("fore and hind tips coincide".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContactKind {
    ForeLegs,
    HindLegs,
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: ContactKind,
    pub time: f64,
    pub body_pitch_at_contact: f64,
    pub contact_point_world: [f64; 2],
}

/// World positions of the three contact features; the body entry is the
/// top of the collision circle.
pub fn feature_points(state: &RigidBodyState, legs: &LegGeometry) -> [(ContactKind, [f64; 2]); 3] {
    [
        (ContactKind::Body, [state.x, state.z + legs.body_radius]),
        (ContactKind::ForeLegs, state.body_to_world(legs.fore_tip())),
        (ContactKind::HindLegs, state.body_to_world(legs.hind_tip())),
    ]
}

/// Distance from the highest feature to the ceiling, clamped at zero.
pub fn clearance(state: &RigidBodyState, legs: &LegGeometry, world: &WorldParams) -> f64 {
    let top = feature_points(state, legs)
        .iter()
        .map(|(_, p)| p[1])
        .fold(f64::NEG_INFINITY, f64::max);
    (world.ceiling_height - top).max(0.0)
}

fn event_at(kind: ContactKind, state: &RigidBodyState, x: f64, world: &WorldParams) -> ContactEvent {
    ContactEvent {
        kind,
        time: state.time,
        body_pitch_at_contact: state.pitch,
        contact_point_world: [x, world.ceiling_height],
    }
}

/// Static contact check. A touching body circle takes precedence; otherwise
/// the highest touching leg tip is reported.
pub fn detect_contact(
    state: &RigidBodyState,
    legs: &LegGeometry,
    world: &WorldParams,
) -> Option<ContactEvent> {
    let h = world.ceiling_height;
    let pts = feature_points(state, legs);
    if pts[0].1[1] >= h - CONTACT_TOL {
        return Some(event_at(ContactKind::Body, state, pts[0].1[0], world));
    }
    pts[1..]
        .iter()
        .filter(|(_, p)| p[1] >= h - CONTACT_TOL)
        .max_by(|a, b| a.1[1].total_cmp(&b.1[1]))
        .map(|(k, p)| event_at(*k, state, p[0], world))
}

/// First feature crossing the ceiling plane between two consecutive states.
///
/// Crossing times come from linear interpolation of each feature's height
/// over the step; the earliest wins, ties resolved toward the body. The
/// returned fraction lies in `[0, 1]`.
pub fn detect_crossing(
    prev: &RigidBodyState,
    cur: &RigidBodyState,
    legs: &LegGeometry,
    world: &WorldParams,
) -> Option<(ContactEvent, f64)> {
    let h = world.ceiling_height;
    let a = feature_points(prev, legs);
    let b = feature_points(cur, legs);
    let mut best: Option<(ContactKind, f64, f64)> = None;
    for i in 0..3 {
        let (kind, p0) = a[i];
        let p1 = b[i].1;
        if p1[1] < h - CONTACT_TOL {
            continue;
        }
        let frac = if p0[1] >= h - CONTACT_TOL {
            0.0
        } else {
            ((h - p0[1]) / (p1[1] - p0[1])).clamp(0.0, 1.0)
        };
        if best.is_none_or(|(_, f, _)| frac < f) {
            best = Some((kind, frac, p0[0] + frac * (p1[0] - p0[0])));
        }
    }
    best.map(|(kind, frac, x)| {
        let ev = ContactEvent {
            kind,
            time: prev.time + frac * (cur.time - prev.time),
            body_pitch_at_contact: crate::dynamics::wrap_angle(
                prev.pitch + frac * crate::dynamics::wrap_angle(cur.pitch - prev.pitch),
            ),
            contact_point_world: [x, h],
        };
        (ev, frac)
    })
}

fn feature_height(state: &RigidBodyState, legs: &LegGeometry, kind: ContactKind) -> f64 {
    let pts = feature_points(state, legs);
    match kind {
        ContactKind::Body => pts[0].1[1],
        ContactKind::ForeLegs => pts[1].1[1],
        ContactKind::HindLegs => pts[2].1[1],
    }
}

/// Locates the exact crossing instant of `kind` inside a free-flight step by
/// bisection on re-integrated sub-steps from `prev`, and returns the state at
/// that instant together with its contact event.
pub fn refine_crossing(
    prev: &RigidBodyState,
    command: PairCommands,
    kind: ContactKind,
    dt: f64,
    params: &VehicleParams,
    legs: &LegGeometry,
    world: &WorldParams,
) -> Result<(RigidBodyState, ContactEvent)> {
    let h = world.ceiling_height;
    if feature_height(prev, legs, kind) >= h - CONTACT_TOL {
        let x = match kind {
            ContactKind::Body => prev.x,
            ContactKind::ForeLegs => prev.body_to_world(legs.fore_tip())[0],
            ContactKind::HindLegs => prev.body_to_world(legs.hind_tip())[0],
        };
        return Ok((*prev, event_at(kind, prev, x, world)));
    }
    let (mut lo, mut hi) = (0.0, dt);
    let mut at_hi = step_free_flight(prev, command, params, world, dt)?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = step_free_flight(prev, command, params, world, mid)?;
        if feature_height(&s, legs, kind) >= h {
            hi = mid;
            at_hi = s;
        } else {
            lo = mid;
        }
    }
    let x = match kind {
        ContactKind::Body => at_hi.x,
        ContactKind::ForeLegs => at_hi.body_to_world(legs.fore_tip())[0],
        ContactKind::HindLegs => at_hi.body_to_world(legs.hind_tip())[0],
    };
    Ok((at_hi, event_at(kind, &at_hi, x, world)))
}

/// Body hanging from the fore-leg pin on the ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnedState {
    pub pin_point: [f64; 2],
    /// Body pitch, unwrapped from the attachment value, rad.
    pub swing_angle: f64,
    /// rad/s
    pub swing_rate: f64,
    pub attached: bool,
    /// Center of mass relative to the pin, expressed in the body frame.
    pub com_offset_body: [f64; 2],
    pub time: f64,
}

fn rotate(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

/// Planar angular momentum of the free body about a fixed world point.
pub fn angular_momentum_about(point: [f64; 2], state: &RigidBodyState, params: &VehicleParams) -> f64 {
    let rx = state.x - point[0];
    let rz = state.z - point[1];
    params.inertia_yy * state.pitch_rate + params.mass * (rx * state.vz - rz * state.vx)
}

impl PinnedState {
    /// Center of mass relative to the pin in the world frame.
    pub fn com_offset(&self) -> [f64; 2] {
        rotate(self.com_offset_body, self.swing_angle)
    }

    pub fn com_position(&self) -> [f64; 2] {
        let r = self.com_offset();
        [self.pin_point[0] + r[0], self.pin_point[1] + r[1]]
    }

    pub fn pivot_inertia(&self, params: &VehicleParams) -> f64 {
        let r = self.com_offset_body;
        params.inertia_yy + params.mass * (r[0] * r[0] + r[1] * r[1])
    }

    /// Angular momentum about the pin.
    pub fn angular_momentum(&self, params: &VehicleParams) -> f64 {
        self.pivot_inertia(params) * self.swing_rate
    }

    /// Mechanical energy with the potential referenced to the lowest possible
    /// center-of-mass position, so it is never negative.
    pub fn energy(&self, params: &VehicleParams, world: &WorldParams) -> f64 {
        let r = self.com_offset_body;
        let len = r[0].hypot(r[1]);
        0.5 * self.pivot_inertia(params) * self.swing_rate * self.swing_rate
            + params.mass * world.gravity * (self.com_offset()[1] + len)
    }

    pub fn hind_tip_world(&self, legs: &LegGeometry) -> [f64; 2] {
        let c = self.com_position();
        let t = rotate(legs.hind_tip(), self.swing_angle);
        [c[0] + t[0], c[1] + t[1]]
    }

    pub fn body_top(&self, legs: &LegGeometry) -> [f64; 2] {
        let c = self.com_position();
        [c[0], c[1] + legs.body_radius]
    }

    /// Equivalent free-body state (motors off).
    pub fn to_body_state(&self) -> RigidBodyState {
        let c = self.com_position();
        let r = self.com_offset();
        RigidBodyState {
            x: c[0],
            z: c[1],
            vx: -self.swing_rate * r[1],
            vz: self.swing_rate * r[0],
            pitch: crate::dynamics::wrap_angle(self.swing_angle),
            pitch_rate: self.swing_rate,
            motors: Default::default(),
            time: self.time,
        }
    }
}

/// Converts the free-flight state at fore-leg touchdown into a pinned swing.
/// The impact is perfectly plastic at a frictionless pin, so angular
/// momentum about the pin is conserved.
pub fn attach_pin(
    event: &ContactEvent,
    state: &RigidBodyState,
    params: &VehicleParams,
) -> Result<PinnedState> {
    if event.kind != ContactKind::ForeLegs {
        return Err(Error::InvalidState(format!(
            "pin attachment requires a fore-leg contact, got {:?}",
            event.kind
        )));
    }
    state.check_finite()?;
    let pin = event.contact_point_world;
    let r = [state.x - pin[0], state.z - pin[1]];
    let l_pin = angular_momentum_about(pin, state, params);
    let i_pin = params.inertia_yy + params.mass * (r[0] * r[0] + r[1] * r[1]);
    Ok(PinnedState {
        pin_point: pin,
        swing_angle: state.pitch,
        swing_rate: l_pin / i_pin,
        attached: true,
        com_offset_body: rotate(r, -state.pitch),
        time: state.time,
    })
}

/// One RK4 step of the frictionless pendulum about the pin.
pub fn step_pinned(
    p: &PinnedState,
    params: &VehicleParams,
    world: &WorldParams,
    dt: f64,
) -> Result<PinnedState> {
    if !p.attached {
        return Err(Error::InvalidState("step_pinned on a detached body".into()));
    }
    ensure_finite("swing_angle", p.swing_angle)?;
    ensure_finite("swing_rate", p.swing_rate)?;
    if dt <= 0.0 {
        return Err(Error::InvalidParam(format!("dt must be > 0, got {dt}")));
    }
    let r = p.com_offset_body;
    let k = params.mass * world.gravity / p.pivot_inertia(params);
    // torque of gravity about the pin is -m g r_x(φ)
    let accel = |phi: f64| {
        let (s, c) = phi.sin_cos();
        -k * (r[0] * c - r[1] * s)
    };
    let (a0, w0) = (p.swing_angle, p.swing_rate);
    let k1 = (w0, accel(a0));
    let k2 = (w0 + 0.5 * dt * k1.1, accel(a0 + 0.5 * dt * k1.0));
    let k3 = (w0 + 0.5 * dt * k2.1, accel(a0 + 0.5 * dt * k2.0));
    let k4 = (w0 + dt * k3.1, accel(a0 + dt * k3.0));
    let out = PinnedState {
        swing_angle: a0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        swing_rate: w0 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        time: p.time + dt,
        ..*p
    };
    ensure_finite("swing_angle", out.swing_angle)?;
    ensure_finite("swing_rate", out.swing_rate)?;
    Ok(out)
}

/// Trigger-time facts needed for outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerInfo {
    pub triggered: bool,
    /// Time-to-contact at the trigger, s.
    pub tau: f64,
}

/// Contact history of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub events: Vec<ContactEvent>,
    pub swing: Vec<PinnedState>,
    /// Smallest feature-to-ceiling distance seen, m.
    pub d_min: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingOutcome {
    pub n_legs: u8,
    pub body_contact: bool,
    /// m
    pub d_min: f64,
    /// s
    pub tau_trg: f64,
    /// deg, in [0, 180]
    pub theta_impact: f64,
    pub triggered: bool,
}

impl LandingOutcome {
    pub fn label(&self) -> &'static str {
        match self.n_legs {
            4 => "four_leg",
            2 => "two_leg",
            _ => "fail",
        }
    }
}

pub fn classify_outcome(trace: &EpisodeTrace, trigger: &TriggerInfo) -> Result<LandingOutcome> {
    if !trace.terminated {
        return Err(Error::InvalidState("episode has not terminated".into()));
    }
    let fore = trace
        .events
        .iter()
        .position(|e| e.kind == ContactKind::ForeLegs);
    let n_legs = match fore {
        Some(i) if trace.events[i + 1..]
            .iter()
            .any(|e| e.kind == ContactKind::HindLegs) =>
        {
            4
        }
        Some(_) => 2,
        None => 0,
    };
    let theta_impact = trace
        .events
        .iter()
        .find(|e| e.kind != ContactKind::Body)
        .map(|e| crate::dynamics::wrap_angle(e.body_pitch_at_contact).abs().to_degrees())
        .unwrap_or(0.0)
        .min(180.0);
    Ok(LandingOutcome {
        n_legs,
        body_contact: trace.events.iter().any(|e| e.kind == ContactKind::Body),
        d_min: trace.d_min.max(0.0),
        tau_trg: trigger.tau,
        theta_impact,
        triggered: trigger.triggered,
    })
}
