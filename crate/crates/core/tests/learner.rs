mod common;

use invland::checkpoint::{load_learner, save_learner, PolicySidecar};
use invland::env::Transition;
use invland::learner::sac::soft_targets;
use invland::learner::{Batch, ReplayBuffer, Sac, SacHyperparams, ToyTask, Trainer};
use invland::nn::Mlp;
use invland::policy::{log_prob, Heads, TANH_EPS};
use invland::rng::stream_rng;
use invland::sensing::SensingConfig;
use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::ContinuousCDF;

#[test]
fn analytic_gradients_match_finite_differences() {
    let rep = common::gradient_suite(20);
    assert!(rep.worst() < 1e-4, "{rep:?}");
}

#[test]
fn squashed_density_integrates_to_one() {
    let n = 1000;
    let h = 2.0 / n as f64;
    for (mu, ls) in [(0.0, 0.0), (0.4, -0.7), (-0.8, -0.3), (0.2, -1.5)] {
        let heads = Heads { mu_trg: mu, log_std_trg: ls, mu_my: -0.5 * mu, log_std_my: ls + 0.2 };
        let mut mass = 0.0;
        for i in 0..n {
            let a0: f64 = -1.0 + (i as f64 + 0.5) * h;
            for j in 0..n {
                let a1: f64 = -1.0 + (j as f64 + 0.5) * h;
                mass += log_prob(&heads, [a0.atanh(), a1.atanh()]).exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-3, "mu {mu} log_std {ls}: {mass}");
    }
}

#[test]
fn standard_head_log_prob_at_origin() {
    let lp = log_prob(&Heads::default(), [0.0, 0.0]);
    let want = 2.0 * (-0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 + TANH_EPS).ln());
    assert!((lp - want).abs() < 1e-15);
    assert!((lp - 2.0 * -0.9189).abs() < 1e-4);
}

fn dummy(i: usize) -> Transition {
    Transition {
        obs: [i as f64, 0.0, 0.0],
        raw_action: [0.0; 2],
        action: [0.0; 2],
        reward: 0.0,
        next_obs: [0.0; 3],
        done: true,
        trigger: true,
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(100).unwrap();
    for i in 0..100 {
        buf.push(dummy(i));
    }
    let mut counts = [0usize; 100];
    let mut rng = stream_rng(11, 0);
    for _ in 0..1000 {
        for k in buf.sample_indices(1000, &mut rng).unwrap() {
            counts[k] += 1;
        }
    }
    let (n, p): (f64, f64) = (1e6, 0.01);
    let sd = (n * p * (1.0 - p)).sqrt();
    // 3σ per slot, Bonferroni-widened to keep the family-wise rate at the
    // single-slot level: 1 − Φ(4.0) ≈ 0.0027 / 100 / 2
    for (k, &c) in counts.iter().enumerate() {
        assert!((c as f64 - n * p).abs() <= 4.0 * sd, "slot {k}: {c}");
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - n * p).powi(2) / (n * p)).sum();
    let crit = statrs::distribution::ChiSquared::new(99.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn replay_ring_semantics() {
    let mut buf = ReplayBuffer::new(3).unwrap();
    buf.push(dummy(0));
    assert_eq!(buf.len(), 1);
    for i in 1..4 {
        buf.push(dummy(i));
    }
    assert_eq!(buf.len(), 3);
    let firsts: Vec<f64> = buf.iter().map(|t| t.obs[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
    assert!(buf.sample(4, &mut stream_rng(0, 0)).is_err());
}

fn random_batch(n: usize, seed: u64) -> Batch {
    let mut rng = stream_rng(seed, 1);
    let items: Vec<Transition> = (0..n)
        .map(|_| Transition {
            obs: [rng.random(), rng.random_range(-1.0..1.0), rng.random()],
            raw_action: [0.0; 2],
            action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            reward: rng.random(),
            next_obs: [rng.random(), rng.random_range(-1.0..1.0), rng.random()],
            done: rng.random_bool(0.3),
            trigger: false,
        })
        .collect();
    Batch::from_transitions(&items.iter().collect::<Vec<_>>())
}

#[test]
fn checkpoint_reload_gives_identical_next_update() {
    let hp = SacHyperparams { hidden: 16, batch_size: 16, warmup_episodes: 5, min_updates_per_episode: 4, ..Default::default() };
    let mut t = Trainer::new(ToyTask, hp, 3, 10).unwrap();
    t.train(30, |_, _, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("learner.bin");
    save_learner(&path, &t.sac, &PolicySidecar::new(&t.sac.actor, &SensingConfig::default(), 0.0)).unwrap();
    let mut reloaded = load_learner(&path, hp).unwrap();
    assert_eq!(reloaded, t.sac);
    let batch = random_batch(16, 5);
    let mut original = t.sac.clone();
    let a = original.update(&batch, &mut stream_rng(9, 9)).unwrap();
    let b = reloaded.update(&batch, &mut stream_rng(9, 9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(original, reloaded);
}

#[test]
fn zero_beta_targets_are_one_step_td() {
    let r = array![0.8, 0.1, -0.2];
    let d = array![1.0, 0.0, 0.0];
    let q1 = array![5.0, 0.3, 1.0];
    let q2 = array![4.0, 0.5, 0.7];
    let lp = array![3.0, -1.0, 2.0];
    let y = soft_targets(&r, &d, &q1, &q2, &lp, 0.9, 0.0);
    assert_eq!(y.to_vec(), vec![0.8, 0.1 + 0.9 * 0.3, -0.2 + 0.9 * 0.7]);
    let y = soft_targets(&r, &d, &q1, &q2, &lp, 0.0, 0.5);
    assert_eq!(y, r);

    // near-deterministic actor and β = 0: the sampled next action is the mean
    let hp = SacHyperparams { hidden: 6, initial_beta: 0.0, auto_beta: false, ..Default::default() };
    let mut sac = Sac::new(hp, &mut stream_rng(1, 2)).unwrap();
    let last = sac.actor.net.layers.last_mut().unwrap();
    last.w.column_mut(1).fill(0.0);
    last.w.column_mut(3).fill(0.0);
    last.b[1] = -20.0;
    last.b[3] = -20.0;
    let batch = random_batch(8, 2);
    let mut rng = stream_rng(4, 4);
    let noise = Array2::from_shape_fn((8, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let y = sac.critic_targets(&batch, noise.view());
    let means = sac.actor.net.forward(batch.next_obs.view());
    for i in 0..8 {
        let a = [means[[i, 0]].tanh(), means[[i, 2]].tanh()];
        let x = [batch.next_obs[[i, 0]], batch.next_obs[[i, 1]], batch.next_obs[[i, 2]], a[0], a[1]];
        let q = sac.q1_target.forward_one(&x)[0].min(sac.q2_target.forward_one(&x)[0]);
        let want = batch.reward[i] + hp.gamma * (1.0 - batch.done[i]) * q;
        assert!((y[i] - want).abs() < 1e-9, "row {i}: {} vs {want}", y[i]);
    }
}

#[test]
fn terminal_target_ignores_critics() {
    let sac = Sac::new(SacHyperparams { hidden: 4, ..Default::default() }, &mut stream_rng(0, 0)).unwrap();
    let mut batch = random_batch(1, 0);
    batch.reward[0] = 0.8;
    batch.done[0] = 1.0;
    let y = sac.critic_targets(&batch, Array2::zeros((1, 2)).view());
    assert_eq!(y[0], 0.8);
}

fn flat_critic_sac(beta: f64) -> Sac {
    let hp = SacHyperparams { hidden: 8, initial_beta: beta, auto_beta: false, ..Default::default() };
    let mut sac = Sac::new(hp, &mut stream_rng(2, 3)).unwrap();
    for q in [&mut sac.q1, &mut sac.q2, &mut sac.q1_target, &mut sac.q2_target] {
        *q = Mlp::zeros(&q.dims());
    }
    sac
}

#[test]
fn flat_objective_gives_zero_actor_gradient() {
    let sac = flat_critic_sac(0.0);
    let batch = random_batch(16, 3);
    let mut rng = stream_rng(5, 5);
    let noise = Array2::from_shape_fn((16, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let (_, g, _, _) = sac.actor_loss_and_grad(batch.obs.view(), noise.view());
    assert!(g.params().all(|v| v.abs() < 1e-12));
}

#[test]
fn large_beta_raises_entropy() {
    let mut sac = flat_critic_sac(10.0);
    // start narrow so there is room to widen
    let last = sac.actor.net.layers.last_mut().unwrap();
    last.b[1] = -2.5;
    last.b[3] = -2.5;
    let batch = random_batch(64, 6);
    let mut rng = stream_rng(6, 6);
    let probe = Array2::from_shape_fn((64, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let entropy = |s: &Sac| -s.actor_loss_and_grad(batch.obs.view(), probe.view()).2;
    let before = entropy(&sac);
    for _ in 0..100 {
        sac.update(&batch, &mut rng).unwrap();
    }
    let after = entropy(&sac);
    assert!(after > before + 0.1, "entropy {before} -> {after}");
}

#[test]
fn soft_update_arithmetic() {
    let mut target = Mlp::zeros(&[1, 1]);
    let mut online = Mlp::zeros(&[1, 1]);
    online.layers[0].b[0] = 2.0;
    target.soft_update_from(&online, 0.005);
    assert!((target.layers[0].b[0] - 0.01).abs() < 1e-15);
    let before = target.clone();
    target.soft_update_from(&online, 0.0);
    assert_eq!(target, before);
    target.soft_update_from(&online, 1.0);
    assert_eq!(target, online);
}
