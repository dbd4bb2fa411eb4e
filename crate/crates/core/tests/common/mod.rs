//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the code under test to produce an expected
//! value.
#![allow(dead_code)]

use invland::contact::{
    angular_momentum_about, attach_pin, step_pinned, ContactEvent, ContactKind, LandingOutcome,
};
use invland::dynamics::{motor_step, step_free_flight, MotorState, PairCommands, RigidBodyState, VehicleParams, WorldParams};
use invland::env::{episode_reward, ApproachCondition, EnvConfig, LandingEnv, RewardParams};
use invland::learner::{Sac, SacHyperparams};
use invland::nn::Mlp;
use invland::policy::{sample_action, sample_batch, sample_output_grad, ActionSample, Heads, PolicyParams};
use invland::rng::stream_rng;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn perturbed(net: &Mlp, k: usize, h: f64) -> Mlp {
    let mut n = net.clone();
    *n.params_mut().nth(k).expect("param index") += h;
    n
}

/// Central differences of `f` over every parameter of `net`.
pub fn fd_grad(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    (0..net.param_count())
        .map(|k| (f(&perturbed(net, k, FD_STEP)) - f(&perturbed(net, k, -FD_STEP))) / (2.0 * FD_STEP))
        .collect()
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Worst relative error per gradient family over `instances` random small
/// problems.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradientReport {
    pub log_prob: f64,
    pub critic_q1: f64,
    pub critic_q2: f64,
    pub actor: f64,
    pub beta: f64,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        [self.log_prob, self.critic_q1, self.critic_q2, self.actor, self.beta]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn gradient_suite(instances: usize) -> GradientReport {
    let mut rep = GradientReport::default();
    for inst in 0..instances {
        let mut rng = stream_rng(0xF00D, inst as u64);
        let hidden = 3 + inst % 4;
        let b = 2 + inst % 5;
        let hp = SacHyperparams {
            hidden,
            initial_beta: rng.random_range(0.05..2.0),
            ..Default::default()
        };
        let mut sac = Sac::new(hp, &mut rng).expect("valid hyperparameters");
        // perturb the critics so they differ from their targets and from
        // each other
        for q in [&mut sac.q1, &mut sac.q2] {
            q.params_mut().for_each(|p| *p += 0.3 * rng.random_range(-1.0..1.0));
        }
        let obs = normal_matrix(b, 3, &mut rng);
        let noise = normal_matrix(b, 2, &mut rng);

        // reparameterized log-prob plus a linear functional of the action
        let w_lp = Array1::from_shape_fn(b, |_| rng.random_range(-1.0..1.0));
        let w_a = normal_matrix(b, 2, &mut rng);
        let objective = |net: &Mlp| {
            let s = sample_batch(net.forward(obs.view()), noise.view());
            (&s.log_prob * &w_lp).sum() + (&s.squashed * &w_a).sum()
        };
        let (out, cache) = sac.actor.net.forward_cached(obs.view());
        let s = sample_batch(out, noise.view());
        let g_out = sample_output_grad(&s, noise.view(), w_lp.view(), w_a.view());
        let (g, _) = sac.actor.net.backward(&cache, g_out.view());
        let analytic: Vec<f64> = g.params().copied().collect();
        rep.log_prob = rep.log_prob.max(rel_err(&analytic, &fd_grad(&sac.actor.net, objective)));

        // critics
        let x = normal_matrix(b, 5, &mut rng);
        let y = Array1::from_shape_fn(b, |_| rng.random_range(-1.0..1.0));
        for (which, q) in [(1, &sac.q1), (2, &sac.q2)] {
            let (_, g) = Sac::critic_loss_and_grad(q, x.view(), &y);
            let analytic: Vec<f64> = g.params().copied().collect();
            let fd = fd_grad(q, |n| Sac::critic_loss_and_grad(n, x.view(), &y).0);
            let e = rel_err(&analytic, &fd);
            if which == 1 {
                rep.critic_q1 = rep.critic_q1.max(e);
            } else {
                rep.critic_q2 = rep.critic_q2.max(e);
            }
        }

        // actor objective through the twin-critic minimum
        let (_, g, _, _) = sac.actor_loss_and_grad(obs.view(), noise.view());
        let analytic: Vec<f64> = g.params().copied().collect();
        let fd = fd_grad(&sac.actor.net, |n| {
            let mut probe = sac.clone();
            probe.actor.net = n.clone();
            probe.actor_loss_and_grad(obs.view(), noise.view()).0
        });
        rep.actor = rep.actor.max(rel_err(&analytic, &fd));

        // temperature objective J(log β) = −log β · (mean logπ + H_target)
        let mean_lp = rng.random_range(-3.0..3.0);
        let h_target = sac.hp.target_entropy;
        let j = |lb: f64| -lb * (mean_lp + h_target);
        let lb = sac.log_beta;
        let fd = (j(lb + FD_STEP) - j(lb - FD_STEP)) / (2.0 * FD_STEP);
        rep.beta = rep.beta.max(rel_err(&[sac.beta_grad(mean_lp)], &[fd]));
    }
    rep
}

/// Hand-evaluated reward cases with default constants
/// (c0 = 10, c1 = 20, weights 0.05/0.1/0.2/0.65, body divisor 3).
pub struct RewardCase {
    pub name: &'static str,
    pub outcome: LandingOutcome,
    pub expected: [f64; 5],
}

fn outcome(d_min: f64, tau_trg: f64, theta: f64, n_legs: u8, body: bool, triggered: bool) -> LandingOutcome {
    LandingOutcome {
        n_legs,
        body_contact: body,
        d_min,
        tau_trg,
        theta_impact: theta,
        triggered,
    }
}

fn total(c: [f64; 4]) -> [f64; 5] {
    [c[0], c[1], c[2], c[3], 0.05 * c[0] + 0.1 * c[1] + 0.2 * c[2] + 0.65 * c[3]]
}

pub fn reward_cases() -> Vec<RewardCase> {
    vec![
        RewardCase {
            name: "perfect landing",
            outcome: outcome(0.0, 0.2, 170.0, 4, false, true),
            expected: [1.0, 1.0, 1.0, 1.0, 1.0],
        },
        RewardCase {
            name: "worked two-leg body-contact case",
            outcome: outcome(0.2, 0.25, 120.0, 2, true, true),
            expected: [0.5, 1.0, 1.0, 0.5 / 3.0, 0.025 + 0.1 + 0.2 + 0.65 * 0.5 / 3.0],
        },
        RewardCase {
            name: "all interior",
            outcome: outcome(0.5, 0.3, 60.0, 4, false, true),
            expected: total([0.2, 0.5, 0.5, 1.0]),
        },
        RewardCase {
            name: "saturation edges, zero angle, no legs",
            outcome: outcome(0.1, 0.15, 0.0, 0, false, true),
            expected: [1.0, 1.0, 0.0, 0.0, 0.15],
        },
        RewardCase {
            name: "far trigger, fully inverted",
            outcome: outcome(2.0, 1.2, 180.0, 2, false, true),
            expected: total([0.05, 0.05, 1.0, 0.5]),
        },
        RewardCase {
            name: "four legs with body contact",
            outcome: outcome(0.05, 0.2, 150.0, 4, true, true),
            expected: total([1.0, 1.0, 1.0, 1.0 / 3.0]),
        },
        RewardCase {
            name: "body contact without legs",
            outcome: outcome(0.3, 0.1, 30.0, 0, true, true),
            expected: total([1.0 / 3.0, 0.5, 0.25, 0.0]),
        },
        RewardCase {
            name: "no trigger",
            outcome: outcome(0.25, 0.0, 0.0, 0, false, false),
            expected: [0.4, 0.0, 0.0, 0.0, 0.02],
        },
        RewardCase {
            name: "no trigger, ceiling reached",
            outcome: outcome(0.0, 0.0, 0.0, 0, false, false),
            expected: [1.0, 0.0, 0.0, 0.0, 0.05],
        },
        RewardCase {
            name: "inside trigger window, partial angle",
            outcome: outcome(0.4, 0.22, 90.0, 4, false, true),
            expected: total([0.25, 1.0, 0.75, 1.0]),
        },
        RewardCase {
            name: "late trigger",
            outcome: outcome(0.125, 0.26, 45.0, 2, false, true),
            expected: total([0.8, 1.0 / 1.2, 0.375, 0.5]),
        },
        RewardCase {
            name: "zero tau, four legs with body contact",
            outcome: outcome(1.0, 0.0, 100.0, 4, true, true),
            expected: total([0.1, 0.25, 100.0 / 120.0, 1.0 / 3.0]),
        },
    ]
}

/// Largest absolute deviation per case, in case order.
pub fn reward_table_errors() -> Vec<(&'static str, f64)> {
    let p = RewardParams::default();
    reward_cases()
        .into_iter()
        .map(|c| {
            let r = episode_reward(&c.outcome, &p).expect("valid params");
            let got = [r.r_d, r.r_tau, r.r_theta, r.r_legs, r.total];
            let e = got.iter().zip(&c.expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (c.name, e)
        })
        .collect()
}

/// Physics oracle errors.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsReport {
    /// m, worst over the trajectory
    pub ballistic: f64,
    /// absolute, first-order step vs closed form
    pub motor_closed_form: f64,
    /// absolute, two half steps vs one step
    pub motor_composition: f64,
    /// relative pitch-rate error
    pub spin_up: f64,
    /// relative energy drift per simulated second
    pub pendulum_energy: f64,
    /// relative
    pub pin_momentum: f64,
}

pub fn physics_oracles() -> PhysicsReport {
    let vp = VehicleParams::default();
    let world = WorldParams::default();
    let g = world.gravity;
    let dt = 1e-3;

    // gravity-only flight from a launch state
    let s0 = RigidBodyState {
        x: 0.3,
        z: 0.5,
        vx: 1.2,
        vz: 3.0,
        pitch: 0.4,
        pitch_rate: 0.0,
        ..Default::default()
    };
    let mut s = s0;
    let mut ballistic: f64 = 0.0;
    for k in 1..=1000 {
        s = step_free_flight(&s, PairCommands::OFF, &vp, &world, dt).expect("finite");
        let t = k as f64 * dt;
        let x = s0.x + s0.vx * t;
        let z = s0.z + s0.vz * t - 0.5 * g * t * t;
        ballistic = ballistic.max((s.x - x).abs()).max((s.z - z).abs());
    }

    let tau = vp.motor_time_constant;
    let m = motor_step(MotorState::default(), PairCommands { front: 1.0, rear: 0.0 }, tau, &vp).expect("valid");
    let motor_closed_form = (m.front - (1.0 - (-1.0f64).exp())).abs().max(m.rear.abs());
    let start = MotorState { front: 0.2, rear: 0.9 };
    let cmd = PairCommands { front: 0.8, rear: 0.1 };
    let one = motor_step(start, cmd, 0.017, &vp).expect("valid");
    let half = motor_step(start, cmd, 0.0085, &vp).expect("valid");
    let two = motor_step(half, cmd, 0.0085, &vp).expect("valid");
    let motor_composition = (one.front - two.front).abs().max((one.rear - two.rear).abs());

    // front pair already at its command, rear off: constant torque
    let c = 0.4;
    let mut s = RigidBodyState {
        motors: MotorState { front: c, rear: 0.0 },
        ..Default::default()
    };
    let torque = vp.arm_length * c * vp.max_thrust_per_pair;
    let mut spin_up: f64 = 0.0;
    for k in 1..=200 {
        s = step_free_flight(&s, PairCommands { front: c, rear: 0.0 }, &vp, &world, dt).expect("finite");
        let want = torque / vp.inertia_yy * k as f64 * dt;
        spin_up = spin_up.max((s.pitch_rate - want).abs() / want);
    }

    // fore-leg touchdown of a flipping body, then 1 s of swing
    let state = RigidBodyState {
        x: 0.0,
        z: 2.44,
        vx: 0.8,
        vz: 1.5,
        pitch: 2.2,
        pitch_rate: 14.0,
        ..Default::default()
    };
    let pin_point = [state.x + 0.031, world.ceiling_height];
    let ev = ContactEvent {
        kind: ContactKind::ForeLegs,
        time: 0.0,
        body_pitch_at_contact: state.pitch,
        contact_point_world: pin_point,
    };
    let p0 = attach_pin(&ev, &state, &vp).expect("fore-leg event");
    let l_pre = angular_momentum_about(pin_point, &state, &vp);
    let r = [state.x - pin_point[0], state.z - pin_point[1]];
    let l_post = (vp.inertia_yy + vp.mass * (r[0] * r[0] + r[1] * r[1])) * p0.swing_rate;
    let pin_momentum = (l_post - l_pre).abs() / l_pre.abs();

    // energy of the pendulum computed here from the closed-form geometry
    let energy = |p: &invland::contact::PinnedState| {
        let i_pin = vp.inertia_yy + vp.mass * (r[0] * r[0] + r[1] * r[1]);
        let (sn, cs) = (p.swing_angle - state.pitch).sin_cos();
        let h = r[0] * sn + r[1] * cs;
        0.5 * i_pin * p.swing_rate * p.swing_rate + vp.mass * g * (h + r[0].hypot(r[1]))
    };
    let e0 = energy(&p0);
    let mut p = p0;
    let mut drift: f64 = 0.0;
    for _ in 0..1000 {
        p = step_pinned(&p, &vp, &world, dt).expect("attached");
        drift = drift.max((energy(&p) - e0).abs() / e0);
    }

    PhysicsReport {
        ballistic,
        motor_closed_form,
        motor_composition,
        spin_up,
        pendulum_energy: drift,
        pin_momentum,
    }
}

fn never_trigger() -> ActionSample {
    ActionSample {
        raw: [-3.0, 0.0],
        squashed: [(-3.0f64).tanh(), 0.0],
        trigger: false,
        moment: 4e-3,
        log_prob: 0.0,
    }
}

/// Worst `|dτ/dt + 1|` over constant-velocity approaches sampled at the
/// policy rate.
pub fn tau_rate_error() -> f64 {
    let cfg = EnvConfig::default();
    let mut worst: f64 = 0.0;
    for &speed in &[1.5, 2.0, 2.5, 3.0, 3.5] {
        for &angle_deg in &[30.0, 45.0, 60.0, 75.0, 90.0] {
            let cond = ApproachCondition { speed, angle_deg };
            let (mut env, mut obs) = LandingEnv::reset_with(&cfg, cond, cfg.vehicle).expect("valid");
            let mut t = env.state().time;
            loop {
                let r = env.step(&never_trigger()).expect("step");
                if r.done {
                    break;
                }
                let t1 = env.state().time;
                let rate = (r.obs.tau - obs.tau) / (t1 - t);
                worst = worst.max((rate + 1.0).abs());
                obs = r.obs;
                t = t1;
            }
        }
    }
    worst
}

pub struct TriggerCase {
    pub mu: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub expected: f64,
    pub observed: f64,
    pub z: f64,
}

/// Empirical trigger rates against `1 − Φ((atanh(th) − μ)/σ)`, evaluated
/// with an independent normal CDF.
pub fn trigger_frequency_cases(samples: usize) -> Vec<TriggerCase> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let combos = [
        (0.0, 1.0, 0.0),
        (0.5, 1.0, 0.0),
        (-1.0, 0.5, 0.0),
        (1.5, 2.0, 0.3),
        (-0.3, 0.2, -0.2),
        (0.0, 3.0, 0.6),
        (2.0, 0.7, 0.9),
        (-2.0, 1.5, -0.5),
        (0.2, 0.05, 0.15),
    ];
    combos
        .iter()
        .enumerate()
        .map(|(i, &(mu, sigma, threshold))| {
            let heads = Heads {
                mu_trg: mu,
                log_std_trg: f64::ln(sigma),
                mu_my: 0.0,
                log_std_my: 0.0,
            };
            let mut rng = stream_rng(0x7A11, i as u64);
            let hits = (0..samples)
                .filter(|_| sample_action(&heads, threshold, &mut rng).trigger)
                .count();
            let expected = 1.0 - std_normal.cdf((f64::atanh(threshold) - mu) / sigma);
            let observed = hits as f64 / samples as f64;
            let se = (expected * (1.0 - expected) / samples as f64).sqrt();
            TriggerCase {
                mu,
                sigma,
                threshold,
                expected,
                observed,
                z: (observed - expected).abs() / se,
            }
        })
        .collect()
}

/// Hyperparameters for the forced-trigger toy task: a small batch so that
/// learning can start within a few dozen one-step episodes.
pub fn toy_hyperparams() -> SacHyperparams {
    SacHyperparams {
        batch_size: 32,
        warmup_episodes: 10,
        ..Default::default()
    }
}

pub fn policy_from(net: Mlp) -> PolicyParams {
    PolicyParams { net }
}
