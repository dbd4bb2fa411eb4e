//! Emulated visual cues computed from simulator ground truth.
//!
//! `tau = D / vz` is the time-to-contact (the inverse of the relative retinal
//! expansion velocity `vz / D`), `theta_x = vx / D` is the fore/aft
//! translational optical-flow cue, and `D` is the ceiling distance of the
//! center of mass.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{RigidBodyState, WorldParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    /// s
    pub tau: f64,
    /// 1/s
    pub theta_x: f64,
    /// m
    pub d_ceil: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Upper clip of tau, also used when the closure rate is not positive, s.
    pub tau_cap: f64,
    /// Divisors applied before the observation enters a network:
    /// (tau, theta_x, d_ceil).
    pub scales: [f64; 3],
    /// Standard deviation of additive Gaussian noise on (tau, theta_x,
    /// d_ceil). All zero disables noise.
    pub noise_std: [f64; 3],
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            tau_cap: 5.0,
            scales: [1.0, 10.0, 2.0],
            noise_std: [0.0; 3],
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_cap.is_finite() && self.tau_cap > 0.0) {
            return Err(Error::InvalidParam("sensing.tau_cap must be > 0".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParam("sensing.scales must be > 0".into()));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParam("sensing.noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

impl Observation {
    pub fn normalized(&self, cfg: &SensingConfig) -> [f64; 3] {
        [
            self.tau / cfg.scales[0],
            self.theta_x / cfg.scales[1],
            self.d_ceil / cfg.scales[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.theta_x.is_finite() && self.d_ceil.is_finite()
    }
}

pub fn observe(state: &RigidBodyState, world: &WorldParams, cfg: &SensingConfig) -> Result<Observation> {
    let d = world.ceiling_height - state.z;
    if !(d > 0.0) {
        return Err(Error::InvalidState(format!(
            "center of mass at or above the ceiling (d_ceil = {d})"
        )));
    }
    let tau = if state.vz > 0.0 {
        (d / state.vz).clamp(0.0, cfg.tau_cap)
    } else {
        cfg.tau_cap
    };
    let obs = Observation {
        tau,
        theta_x: state.vx / d,
        d_ceil: d,
    };
    if !obs.is_finite() {
        return Err(Error::NonFinite("observation".into()));
    }
    Ok(obs)
}

/// [`observe`] followed by the optional additive noise. Noisy values are
/// re-clipped so the observation invariants still hold.
pub fn observe_noisy<R: Rng + ?Sized>(
    state: &RigidBodyState,
    world: &WorldParams,
    cfg: &SensingConfig,
    rng: &mut R,
) -> Result<Observation> {
    let mut obs = observe(state, world, cfg)?;
    if cfg.noise_std.iter().all(|s| *s == 0.0) {
        return Ok(obs);
    }
    let mut draw = |std: f64| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
        }
    };
    obs.tau = (obs.tau + draw(cfg.noise_std[0])).clamp(0.0, cfg.tau_cap);
    obs.theta_x += draw(cfg.noise_std[1]);
    obs.d_ceil = (obs.d_ceil + draw(cfg.noise_std[2])).max(0.0);
    Ok(obs)
}
