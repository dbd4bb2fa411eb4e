//! Two-head event-triggered Gaussian actor.
//!
//! A shared tanh trunk maps the normalized observation to
//! `(μ_Trg, logσ_Trg, μ_My, logσ_My)`. Both heads draw a raw Gaussian sample
//! that is squashed through `tanh`; the flip fires when the squashed trigger
//! sample exceeds the threshold, and the squashed moment sample is rescaled
//! to `[0, 8]` N·mm.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::MAX_FLIP_MOMENT;
use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps the tanh log-density correction finite at saturation.
pub const TANH_EPS: f64 = 1e-6;
pub const OBS_DIM: usize = 3;
pub const ACTION_DIM: usize = 2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: Mlp,
}

impl PolicyParams {
    pub fn dims(hidden: usize) -> [usize; 4] {
        [OBS_DIM, hidden, hidden, 2 * ACTION_DIM]
    }

    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::init(&Self::dims(hidden), rng),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(&Self::dims(hidden)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.net.dims();
        if d.first() != Some(&OBS_DIM) || d.last() != Some(&(2 * ACTION_DIM)) {
            return Err(Error::InvalidParam(format!("policy network has dims {d:?}")));
        }
        if !self.net.is_finite() {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(())
    }
}

/// Per-head Gaussian parameters in raw (pre-squash) space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Heads {
    pub mu_trg: f64,
    pub log_std_trg: f64,
    pub mu_my: f64,
    pub log_std_my: f64,
}

impl Heads {
    pub fn from_outputs(out: &[f64]) -> Self {
        Self {
            mu_trg: out[0],
            log_std_trg: out[1].clamp(LOG_STD_MIN, LOG_STD_MAX),
            mu_my: out[2],
            log_std_my: out[3].clamp(LOG_STD_MIN, LOG_STD_MAX),
        }
    }

    pub fn mu(&self) -> [f64; 2] {
        [self.mu_trg, self.mu_my]
    }

    pub fn log_std(&self) -> [f64; 2] {
        [self.log_std_trg, self.log_std_my]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    /// Raw Gaussian draws (u_Trg, u_My).
    pub raw: [f64; 2],
    /// `tanh(raw)`.
    pub squashed: [f64; 2],
    pub trigger: bool,
    /// Flip moment, N·m.
    pub moment: f64,
    pub log_prob: f64,
}

/// Maps a squashed moment sample in `[-1, 1]` to N·m.
pub fn moment_from_squashed(a_my: f64) -> f64 {
    (0.5 * MAX_FLIP_MOMENT * (a_my + 1.0)).clamp(0.0, MAX_FLIP_MOMENT)
}

pub fn policy_forward(params: &PolicyParams, obs: &[f64; 3]) -> Result<Heads> {
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observation".into()));
    }
    if !params.net.is_finite() {
        return Err(Error::NonFinite("policy parameters".into()));
    }
    let out = params.net.forward_one(obs);
    Ok(Heads::from_outputs(&out))
}

/// Log-density of the squashed sample for one head, given its raw draw.
pub fn squashed_log_density(mu: f64, log_std: f64, raw: f64) -> f64 {
    let z = (raw - mu) / log_std.exp();
    let a = raw.tanh();
    -0.5 * z * z - log_std - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln()
}

/// Joint log-probability of the raw draws under the head distributions,
/// including the tanh change-of-variables correction.
pub fn log_prob(heads: &Heads, raw: [f64; 2]) -> f64 {
    let (mu, ls) = (heads.mu(), heads.log_std());
    (0..2).map(|k| squashed_log_density(mu[k], ls[k], raw[k])).sum()
}

/// Builds the sample for given standard-normal noise `eps`.
pub fn action_from_noise(heads: &Heads, eps: [f64; 2], threshold: f64) -> ActionSample {
    let (mu, ls) = (heads.mu(), heads.log_std());
    let raw = [mu[0] + ls[0].exp() * eps[0], mu[1] + ls[1].exp() * eps[1]];
    let squashed = [raw[0].tanh(), raw[1].tanh()];
    ActionSample {
        raw,
        squashed,
        trigger: squashed[0] > threshold,
        moment: moment_from_squashed(squashed[1]),
        log_prob: log_prob(heads, raw),
    }
}

pub fn sample_action<R: Rng + ?Sized>(heads: &Heads, threshold: f64, rng: &mut R) -> ActionSample {
    let eps = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    action_from_noise(heads, eps, threshold)
}

/// Mean action (zero noise).
pub fn mean_action(heads: &Heads, threshold: f64) -> ActionSample {
    action_from_noise(heads, [0.0, 0.0], threshold)
}

/// Uniform draw over the squashed action box, used during warmup.
pub fn uniform_action<R: Rng + ?Sized>(threshold: f64, rng: &mut R) -> ActionSample {
    let squashed: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    ActionSample {
        raw: squashed.map(|a| a.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()),
        squashed,
        trigger: squashed[0] > threshold,
        moment: moment_from_squashed(squashed[1]),
        log_prob: -(4.0f64).ln(),
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold.is_finite() && threshold.abs() < 1.0) {
        return Err(Error::OutOfRange(format!(
            "trigger threshold {threshold} must lie in (-1, 1)"
        )));
    }
    Ok(())
}

pub fn trigger_decision(sample: &ActionSample, threshold: f64) -> Result<bool> {
    check_threshold(threshold)?;
    Ok(sample.squashed[0] > threshold)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that one step fires the trigger: `1 − Φ((atanh(th) − μ)/σ)`.
pub fn trigger_probability(mu_trg: f64, std_trg: f64, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if !(std_trg > 0.0) {
        return Err(Error::InvalidParam("trigger std must be > 0".into()));
    }
    Ok(1.0 - normal_cdf((threshold.atanh() - mu_trg) / std_trg))
}

/// Batched actor pass used by the learner: squashed actions, log-probs and
/// what is needed to backpropagate through the reparameterized sample.
#[derive(Debug, Clone)]
pub struct BatchSample {
    /// Raw network outputs (before log-std clamping), `B × 4`.
    pub outputs: Array2<f64>,
    pub raw: Array2<f64>,
    pub squashed: Array2<f64>,
    pub log_prob: Array1<f64>,
}

pub fn sample_batch(outputs: Array2<f64>, noise: ArrayView2<f64>) -> BatchSample {
    let b = outputs.nrows();
    let mut raw = Array2::zeros((b, 2));
    let mut squashed = Array2::zeros((b, 2));
    let mut lp = Array1::zeros(b);
    for i in 0..b {
        let heads = Heads::from_outputs(outputs.row(i).as_slice().expect("contiguous"));
        let s = action_from_noise(&heads, [noise[[i, 0]], noise[[i, 1]]], 0.0);
        for k in 0..2 {
            raw[[i, k]] = s.raw[k];
            squashed[[i, k]] = s.squashed[k];
        }
        lp[i] = s.log_prob;
    }
    BatchSample {
        outputs,
        raw,
        squashed,
        log_prob: lp,
    }
}

/// Gradient of `Σ_i (w_lp[i]·logπ_i + Σ_k w_a[i,k]·a_ik)` with respect to the
/// raw network outputs, holding the noise fixed.
pub fn sample_output_grad(
    s: &BatchSample,
    noise: ArrayView2<f64>,
    w_lp: ArrayView1<f64>,
    w_a: ArrayView2<f64>,
) -> Array2<f64> {
    let b = s.outputs.nrows();
    let mut g = Array2::zeros((b, 4));
    for i in 0..b {
        for k in 0..2 {
            let a = s.squashed[[i, k]];
            let one_m = 1.0 - a * a;
            let dlp_du = 2.0 * a * one_m / (one_m + TANH_EPS);
            let raw_ls = s.outputs[[i, 2 * k + 1]];
            let sigma = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
            let du_dls = sigma * noise[[i, k]];
            let d_u = w_lp[i] * dlp_du + w_a[[i, k]] * one_m;
            g[[i, 2 * k]] = d_u;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls) {
                g[[i, 2 * k + 1]] = -w_lp[i] + d_u * du_dls;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_network_heads() {
        let p = PolicyParams::zeros(64);
        let h = policy_forward(&p, &[0.4, 0.1, 0.5]).unwrap();
        assert_eq!(h, Heads::default());
    }

    #[test]
    fn forward_is_deterministic_and_clamped() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut p = PolicyParams::init(16, &mut rng);
            // exaggerate the output layer so the clamp engages
            p.net.layers[2].w.mapv_inplace(|v| v * 200.0);
            let obs = [rng.random_range(0.0..5.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.5)];
            let a = policy_forward(&p, &obs).unwrap();
            assert_eq!(a, policy_forward(&p, &obs).unwrap());
            for ls in a.log_std() {
                assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&ls));
            }
        }
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let mut p = PolicyParams::zeros(8);
        p.net.layers[1].b[0] = f64::NAN;
        assert!(policy_forward(&p, &[0.0; 3]).is_err());
    }

    #[test]
    fn standard_normal_at_origin() {
        let h = Heads::default();
        let s = action_from_noise(&h, [0.0, 0.0], 0.0);
        assert_eq!(s.squashed, [0.0, 0.0]);
        assert!((s.moment - 4e-3).abs() < 1e-18);
        // log(1 + ε) correction is ~1e-6 per head
        let expect = -2.0 * HALF_LN_2PI - 2.0 * (1.0 + TANH_EPS).ln();
        assert!((s.log_prob - expect).abs() < 1e-15);
        assert!((s.log_prob + 2.0 * 0.9189).abs() < 1e-4);
        assert!(!s.trigger);
    }

    #[test]
    fn moment_saturates() {
        assert_eq!(moment_from_squashed(40f64.tanh()), MAX_FLIP_MOMENT);
        assert_eq!(moment_from_squashed((-40f64).tanh()), 0.0);
    }

    #[test]
    fn trigger_tie_is_false() {
        let mut s = action_from_noise(&Heads::default(), [0.0, 0.0], 0.0);
        s.squashed[0] = 0.3;
        assert!(trigger_decision(&s, 0.0).unwrap());
        s.squashed[0] = 0.25;
        assert!(!trigger_decision(&s, 0.25).unwrap());
        assert!(trigger_decision(&s, 1.0).is_err());
        assert!(trigger_decision(&s, -1.0).is_err());
    }

    #[test]
    fn symmetric_trigger_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = Heads::default();
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_action(&h, 0.0, &mut rng).trigger).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.005, "rate {rate}");
        assert!((trigger_probability(0.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_warmup_action_in_box() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = uniform_action(0.0, &mut rng);
            assert!(a.squashed.iter().all(|v| (-1.0..1.0).contains(v)));
            assert!((0.0..=MAX_FLIP_MOMENT).contains(&a.moment));
        }
    }
}
