//! Finite-difference gradient checks and per-sample loss oracles.

use qmarl::env::ScenarioConfig;
use qmarl::mappo::{
    actor_loss, build_actor, collect_rollout, Critic, CriticArch, EpisodeRunner, RolloutBatch, StepRecord,
    TrainerConfig,
};
use qmarl::nn::{gaussian_log_prob, gaussian_log_prob_grad, Activation, DenseNet, GaussianPolicy, LayerSpec};
use qmarl::qsim::ScalingFn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Norm-wise relative error allowed between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Allowed gap between a module loss and its per-sample oracle.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + FD_STEP;
            let up = f(&p);
            p[k] = x[k] - FD_STEP;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

fn random_net(rng: &mut ChaCha8Rng) -> DenseNet {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=6));
    }
    let layers = (0..depth)
        .map(|i| {
            let act = if rng.random_bool(0.7) {
                Activation::Tanh
            } else {
                Activation::Identity
            };
            let l = LayerSpec::new(sizes[i], sizes[i + 1], act);
            if rng.random_bool(0.3) {
                l.without_bias()
            } else {
                l
            }
        })
        .collect();
    let mut net = DenseNet::new(layers).unwrap();
    net.init_uniform(rng);
    net
}

/// Worst relative error of dense-net parameter and input gradients of a
/// random linear read-out of the output.
pub fn dense_net_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let net = random_net(&mut rng);
        let x = uniform_vec(&mut rng, net.input_dim(), 1.5);
        let w = uniform_vec(&mut rng, net.output_dim(), 1.0);
        let dot = |out: Vec<f64>| out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (g_params, g_input) = net.backward(&net.forward_cached(&x), &w);
        let mut probe = net.clone();
        let fd_params = central_diff(net.params(), |p| {
            probe.set_params(p);
            dot(probe.forward(&x))
        });
        let fd_input = central_diff(&x, |xi| dot(net.forward(xi)));
        worst = worst
            .max(rel_err(&g_params, &fd_params))
            .max(rel_err(&g_input, &fd_input));
    }
    worst
}

/// Worst relative error of the Gaussian log-density gradient.
pub fn log_prob_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let mean = uniform_vec(&mut rng, d, 1.0);
        let log_std = uniform_vec(&mut rng, d, 1.5);
        let action = uniform_vec(&mut rng, d, 2.0);
        let (dm, ds) = gaussian_log_prob_grad(&mean, &log_std, &action);
        let fm = central_diff(&mean, |m| gaussian_log_prob(m, &log_std, &action));
        let fs = central_diff(&log_std, |s| gaussian_log_prob(&mean, s, &action));
        worst = worst.max(rel_err(&dm, &fm)).max(rel_err(&ds, &fs));
    }
    worst
}

pub fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        n_aircraft: 3,
        n_ground: 1,
        horizon: 12,
        comm_range: 0.5,
        world_side: 1.0,
        v_max: 0.02,
        max_links: 2,
    }
}

pub fn small_trainer() -> TrainerConfig {
    TrainerConfig {
        actor_hidden: 8,
        ..TrainerConfig::default()
    }
}

/// A collected batch, with random advantages, and a policy moved away from
/// the one that collected it so that ratios, clipping and KL are all live.
pub struct ActorFixture {
    pub batch: RolloutBatch,
    pub old: GaussianPolicy,
    pub policy: GaussianPolicy,
    pub cfg: TrainerConfig,
}

pub fn actor_fixture(seed: u64, steps: usize) -> ActorFixture {
    let scenario = small_scenario();
    let cfg = small_trainer();
    let old = build_actor(&scenario, &cfg, seed).unwrap();
    let critic = Critic::new(
        CriticArch::Classical { width: 4 },
        scenario.global_obs_dim(),
        &cfg,
        seed,
    )
    .unwrap();
    let mut runner = EpisodeRunner::new(scenario, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = collect_rollout(&mut runner, &old, &critic, steps, &mut rng).unwrap();
    for s in &mut batch.steps {
        s.advantage = rng.random_range(-2.0..2.0);
    }
    let mut policy = old.clone();
    let n_net = policy.mean_net.parameter_count();
    let mut p = policy.flat_params();
    for (k, v) in p.iter_mut().enumerate() {
        *v += if k < n_net {
            rng.random_range(-0.3..0.3)
        } else {
            rng.random_range(-0.2..0.2)
        };
    }
    policy.set_flat_params(&p);
    ActorFixture {
        batch,
        old,
        policy,
        cfg,
    }
}

/// Per-sample re-statement of the actor objective with independently
/// written log-density, KL and entropy. `clip: false` drops the min/clip.
pub fn naive_actor_loss(
    policy: &GaussianPolicy,
    batch: &RolloutBatch,
    indices: &[usize],
    cfg: &TrainerConfig,
    clip: bool,
) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for &i in indices {
        let rec = &batch.agents[i];
        let adv = batch.steps[rec.step].advantage;
        let mu = policy.mean(&rec.obs);
        let mut lp = 0.0;
        let mut kl = 0.0;
        for k in 0..mu.len() {
            let s_new = policy.log_std[k].exp();
            let s_old = batch.old_log_std[k].exp();
            lp += -0.5 * ((rec.action[k] - mu[k]) / s_new).powi(2) - s_new.ln() - 0.5 * ln_2pi;
            kl += (s_new / s_old).ln() + (s_old * s_old + (rec.mean_old[k] - mu[k]).powi(2)) / (2.0 * s_new * s_new)
                - 0.5;
        }
        let r = (lp - rec.log_prob_old).exp();
        let surrogate = if clip {
            let rc = r.max(1.0 - cfg.clip_eps).min(1.0 + cfg.clip_eps);
            (r * adv).min(rc * adv)
        } else {
            r * adv
        };
        total += -surrogate + cfg.kl_coef * kl;
    }
    let entropy: f64 = policy.log_std.iter().map(|s| 0.5 * (1.0 + ln_2pi) + s).sum();
    total / indices.len() as f64 - cfg.entropy_coef * entropy
}

fn random_minibatch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// Worst relative error of the actor-loss gradient over random minibatches.
pub fn actor_gradient_error(seed: u64, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let fx = actor_fixture(seed + case as u64, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ case as u64);
        let mb = random_minibatch(&mut rng, fx.batch.agents.len(), 8);
        let analytic = actor_loss(&fx.policy, &fx.batch, &mb, &fx.cfg).grad;
        let mut probe = fx.policy.clone();
        let numeric = central_diff(&fx.policy.flat_params(), |p| {
            probe.set_flat_params(p);
            actor_loss(&probe, &fx.batch, &mb, &fx.cfg).loss
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Worst gap between the actor loss and its per-sample oracle.
pub fn actor_oracle_error(seed: u64, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let fx = actor_fixture(seed + case as u64, 12);
        let all: Vec<usize> = (0..fx.batch.agents.len()).collect();
        let got = actor_loss(&fx.policy, &fx.batch, &all, &fx.cfg).loss;
        let want = naive_actor_loss(&fx.policy, &fx.batch, &all, &fx.cfg, true);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    worst
}

/// With an enormous clip range the clipped objective and its gradient equal
/// the plain importance-weighted ones. Returns the worst (loss gap, gradient
/// error) pair.
pub fn clip_inertness_error(seed: u64, cases: usize) -> (f64, f64) {
    let (mut loss_gap, mut grad_err): (f64, f64) = (0.0, 0.0);
    for case in 0..cases {
        let mut fx = actor_fixture(seed + case as u64, 6);
        fx.cfg.clip_eps = 1e12;
        let all: Vec<usize> = (0..fx.batch.agents.len()).collect();
        let out = actor_loss(&fx.policy, &fx.batch, &all, &fx.cfg);
        let plain = naive_actor_loss(&fx.policy, &fx.batch, &all, &fx.cfg, false);
        loss_gap = loss_gap.max((out.loss - plain).abs());
        let mut probe = fx.policy.clone();
        let numeric = central_diff(&fx.policy.flat_params(), |p| {
            probe.set_flat_params(p);
            naive_actor_loss(&probe, &fx.batch, &all, &fx.cfg, false)
        });
        grad_err = grad_err.max(rel_err(&out.grad, &numeric));
        assert_eq!(out.clip_fraction, 0.0);
    }
    (loss_gap, grad_err)
}

/// Per-sample clipped value loss built from `Critic::value`.
pub fn naive_critic_loss(critic: &Critic, samples: &[(Vec<f64>, f64, f64)], eps: f64) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|(obs, v_old, target)| {
            let v = critic.value(obs);
            let vc = v.max(v_old - eps).min(v_old + eps);
            (v - target).powi(2).max((vc - target).powi(2))
        })
        .sum();
    total / samples.len() as f64
}

fn critic_samples(critic: &Critic, rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, f64, f64)> {
    (0..n)
        .map(|_| {
            let obs = uniform_vec(rng, critic.input_dim(), 1.0);
            let v = critic.value(&obs);
            (obs, v + rng.random_range(-0.4..0.4), v + rng.random_range(-1.0..1.0))
        })
        .collect()
}

fn as_refs(samples: &[(Vec<f64>, f64, f64)]) -> Vec<(&[f64], f64, f64)> {
    samples.iter().map(|(o, v, t)| (o.as_slice(), *v, *t)).collect()
}

/// Worst relative error of the classical critic gradient, and worst gap
/// between its loss and the per-sample oracle.
pub fn classical_critic_error(seed: u64, cases: usize) -> (f64, f64) {
    let cfg = small_trainer();
    let o = small_scenario().global_obs_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut grad_err, mut loss_gap): (f64, f64) = (0.0, 0.0);
    for case in 0..cases {
        let width = 2 + case % 5;
        let mut critic = Critic::new(CriticArch::Classical { width }, o, &cfg, seed + case as u64).unwrap();
        let mut p = critic.classical_params();
        for v in &mut p {
            *v += rng.random_range(-0.5..0.5);
        }
        critic.set_classical_params(&p);
        let samples = critic_samples(&critic, &mut rng, 8);
        let g = critic.loss_and_gradient(&as_refs(&samples), cfg.clip_eps).unwrap();
        loss_gap = loss_gap.max((g.loss - naive_critic_loss(&critic, &samples, cfg.clip_eps)).abs());
        let mut probe = critic.clone();
        let numeric = central_diff(&p, |q| {
            probe.set_classical_params(q);
            naive_critic_loss(&probe, &samples, cfg.clip_eps)
        });
        grad_err = grad_err.max(rel_err(&g.classical, &numeric));
    }
    (grad_err, loss_gap)
}

/// Circuit critics: the post-circuit head gradient is exact, and the loss
/// reported alongside the SPSA estimate is the centre-point loss. Returns the
/// worst (head gradient error, loss gap).
pub fn quantum_head_error(seed: u64, cases: usize) -> (f64, f64) {
    let cfg = small_trainer();
    let o = small_scenario().global_obs_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut grad_err, mut loss_gap): (f64, f64) = (0.0, 0.0);
    for case in 0..cases {
        let layers = 1 + case % 3;
        let scaling_fn = if case % 2 == 0 {
            ScalingFn::Identity
        } else {
            ScalingFn::Arctan
        };
        let post_hidden = [0, 3][case % 2];
        let arch = CriticArch::Quantum {
            layers,
            scaling_fn,
            post_hidden,
        };
        let mut critic = Critic::new(arch, o, &cfg, seed + case as u64).unwrap();
        let counts = critic.weight_counts();
        let mut p = critic.classical_params();
        for v in &mut p {
            *v += rng.random_range(-0.3..0.3);
        }
        critic.set_classical_params(&p);
        let samples = critic_samples(&critic, &mut rng, 6);
        let g = critic.loss_and_gradient(&as_refs(&samples), cfg.clip_eps).unwrap();
        loss_gap = loss_gap.max((g.loss - naive_critic_loss(&critic, &samples, cfg.clip_eps)).abs());
        let head_start = o * 4 * layers + 4 * layers;
        assert_eq!(p.len(), counts.classical);
        let mut probe = critic.clone();
        let head = &p[head_start..];
        let numeric = central_diff(head, |h| {
            let mut q = p.clone();
            q[head_start..].copy_from_slice(h);
            probe.set_classical_params(&q);
            naive_critic_loss(&probe, &samples, cfg.clip_eps)
        });
        grad_err = grad_err.max(rel_err(&g.classical[head_start..], &numeric));
    }
    (grad_err, loss_gap)
}

/// Returns-to-go per step, restarting at every `done`; the trailing
/// unfinished segment bootstraps from zero.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let mut g = 0.0;
            let mut discount = 1.0;
            for s in t..rewards.len() {
                g += discount * rewards[s];
                discount *= gamma;
                if dones[s] {
                    break;
                }
            }
            g
        })
        .collect()
}

/// Worst gap between lambda = 1, V = 0 advantages and brute-force
/// discounted returns over random multi-episode batches.
pub fn gae_return_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..60);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let gamma = rng.random_range(0.5..1.0);
        let mut batch = RolloutBatch {
            steps: rewards
                .iter()
                .zip(&dones)
                .map(|(&reward, &done)| StepRecord {
                    global_obs: vec![],
                    reward,
                    value: 0.0,
                    done,
                    advantage: 0.0,
                    ret: 0.0,
                })
                .collect(),
            agents: vec![],
            old_log_std: vec![],
            bootstrap: 0.0,
            episode_returns: vec![],
        };
        batch.compute_advantages(gamma, 1.0);
        let want = discounted_returns(&rewards, &dones, gamma);
        for (s, w) in batch.steps.iter().zip(&want) {
            worst = worst.max((s.advantage - w).abs()).max((s.ret - w).abs());
        }
    }
    worst
}
