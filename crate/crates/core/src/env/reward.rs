//! Episode reward: distance, trigger timing, impact angle and leg count,
//! combined with fixed weights and credited to the trigger transition.

use serde::{Deserialize, Serialize};

use crate::contact::LandingOutcome;
use crate::error::{Error, Result};

/// Center of the preferred trigger window, s.
pub const TAU_TARGET: f64 = 0.2;
/// Impact angle at which the angle term saturates, deg.
pub const THETA_SATURATION_DEG: f64 = 120.0;

// Relative slack when testing a clipped reciprocal against its cap, so that
// window endpoints such as τ = 0.15 are not lost to rounding of τ − 0.2.
const CLIP_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Cap of `1/|d_min|`, 1/m.
    pub c0: f64,
    /// Cap of `1/|τ_trg − 0.2|`, 1/s.
    pub c1: f64,
    /// Weights of (r_d, r_tau, r_theta, r_legs).
    pub weights: [f64; 4],
    /// Divisor applied to r_legs after body or propeller contact.
    pub body_contact_divisor: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            c0: 10.0,
            c1: 20.0,
            weights: [0.05, 0.1, 0.2, 0.65],
            body_contact_divisor: 3.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(Error::InvalidParam(format!("reward.c0 must be > 0, got {}", self.c0)));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0) {
            return Err(Error::InvalidParam(format!("reward.c1 must be > 0, got {}", self.c1)));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParam("reward.weights must be >= 0".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam("reward.weights must sum to 1".into()));
        }
        if !(self.body_contact_divisor.is_finite() && self.body_contact_divisor >= 1.0) {
            return Err(Error::InvalidParam(
                "reward.body_contact_divisor must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_d: f64,
    pub r_tau: f64,
    pub r_theta: f64,
    pub r_legs: f64,
    pub total: f64,
}

/// `clip(1/|dev|, 0, cap) / cap`.
fn clipped_reciprocal(dev: f64, cap: f64) -> f64 {
    let dev = dev.abs();
    if dev * cap <= 1.0 + CLIP_RTOL {
        1.0
    } else {
        1.0 / (dev * cap)
    }
}

pub fn distance_term(d_min: f64, c0: f64) -> f64 {
    clipped_reciprocal(d_min, c0)
}

pub fn timing_term(tau_trg: f64, c1: f64) -> f64 {
    clipped_reciprocal(tau_trg - TAU_TARGET, c1)
}

pub fn angle_term(theta_impact_deg: f64) -> f64 {
    let t = theta_impact_deg.abs();
    if t < THETA_SATURATION_DEG {
        t / THETA_SATURATION_DEG
    } else {
        1.0
    }
}

pub fn legs_term(n_legs: u8) -> f64 {
    match n_legs {
        3 | 4 => 1.0,
        1 | 2 => 0.5,
        _ => 0.0,
    }
}

/// Full episode reward. Episodes that never triggered score only the
/// distance term.
pub fn episode_reward(outcome: &LandingOutcome, params: &RewardParams) -> Result<RewardComponents> {
    if !(params.c0 > 0.0) || !(params.c1 > 0.0) {
        return Err(Error::InvalidParam("reward constants c0, c1 must be > 0".into()));
    }
    let r_d = distance_term(outcome.d_min, params.c0);
    let (r_tau, r_theta, mut r_legs) = if outcome.triggered {
        (
            timing_term(outcome.tau_trg, params.c1),
            angle_term(outcome.theta_impact),
            legs_term(outcome.n_legs),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    if outcome.body_contact {
        r_legs /= params.body_contact_divisor;
    }
    let w = params.weights;
    Ok(RewardComponents {
        r_d,
        r_tau,
        r_theta,
        r_legs,
        total: w[0] * r_d + w[1] * r_tau + w[2] * r_theta + w[3] * r_legs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(d_min: f64, tau: f64, theta: f64, n_legs: u8, body: bool) -> LandingOutcome {
        LandingOutcome {
            n_legs,
            body_contact: body,
            d_min,
            tau_trg: tau,
            theta_impact: theta,
            triggered: true,
        }
    }

    #[test]
    fn perfect_landing() {
        let r = episode_reward(&outcome(0.0, 0.2, 170.0, 4, false), &RewardParams::default()).unwrap();
        assert_eq!((r.r_d, r.r_tau, r.r_theta, r.r_legs), (1.0, 1.0, 1.0, 1.0));
        assert!((r.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sixty_degrees_is_half() {
        assert_eq!(angle_term(60.0), 0.5);
    }

    #[test]
    fn worked_body_contact_case() {
        let r = episode_reward(&outcome(0.2, 0.25, 120.0, 2, true), &RewardParams::default()).unwrap();
        assert!((r.r_d - 0.5).abs() < 1e-12);
        assert_eq!(r.r_tau, 1.0);
        assert_eq!(r.r_theta, 1.0);
        assert!((r.r_legs - 0.5 / 3.0).abs() < 1e-15);
        assert!((r.total - 0.433_333_333_333_333).abs() < 1e-12);
    }

    #[test]
    fn untriggered_scores_distance_only() {
        let mut o = outcome(0.05, 0.0, 0.0, 0, false);
        o.triggered = false;
        let r = episode_reward(&o, &RewardParams::default()).unwrap();
        assert_eq!((r.r_tau, r.r_theta, r.r_legs), (0.0, 0.0, 0.0));
        assert!((r.total - 0.05 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_constants() {
        let p = RewardParams { c0: 0.0, ..Default::default() };
        assert!(episode_reward(&outcome(0.1, 0.2, 0.0, 0, false), &p).is_err());
        let p = RewardParams { c1: -1.0, ..Default::default() };
        assert!(episode_reward(&outcome(0.1, 0.2, 0.0, 0, false), &p).is_err());
    }
}
