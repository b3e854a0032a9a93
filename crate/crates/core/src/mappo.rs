//! Multi-agent PPO with one parameter-shared Gaussian actor and a centralised
//! critic over the concatenated observations of all aircraft.
//!
//! The critic is either a classical two-hidden-layer network or a hybrid
//! network whose core is a data-reuploading circuit. Classical critic
//! parameters (including the circuit's input scalings) are trained with Adam
//! on exact gradients; circuit angles follow the SPSA rule. The gradient that
//! reaches the pre-processing block is a simultaneous-perturbation estimate
//! drawn from the same two perturbed circuit runs used for the angles.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{ActionVector, FanetEnv, Observation, ScenarioConfig};
use crate::error::{Error, Result};
use crate::nn::{
    gaussian_log_prob_grad, l2_norm, Activation, Adam, AdamConfig, DenseNet, GaussianPolicy, LayerSpec, NetCheckpoint,
};
use crate::qsim::{z_expectations, ScalingFn, Spsa, SpsaConfig, VqcSpec};

const WORLD_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const ACTION_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 5;
const SPSA_STREAM: u64 = 6;

/// Deterministic 64-bit seed for item `index` of a named stream.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub lr: f64,
    /// Environment steps per update.
    pub rollout_steps: usize,
    /// Agent records per actor minibatch; step records per critic minibatch.
    pub minibatch_size: usize,
    pub epochs: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub actor_hidden: usize,
    pub initial_log_std: f64,
    pub spsa: SpsaConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let lr = 1e-4;
        Self {
            gamma: 0.99,
            gae_lambda: 0.99,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            kl_coef: 0.2,
            lr,
            rollout_steps: 2000,
            minibatch_size: 256,
            epochs: 5,
            eval_interval: 1000,
            eval_episodes: 5,
            actor_hidden: 64,
            initial_log_std: -1.2,
            spsa: SpsaConfig::with_first_step(lr),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("entropy_coef", self.entropy_coef),
            ("kl_coef", self.kl_coef),
            ("lr", self.lr),
        ];
        for (name, v) in coeffs {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps must lie in (0, 1)"));
        }
        if self.rollout_steps == 0
            || self.minibatch_size == 0
            || self.epochs == 0
            || self.eval_interval == 0
            || self.eval_episodes == 0
            || self.actor_hidden == 0
        {
            return Err(Error::config("sizes and intervals must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Shared actor: `obs -> hidden -> hidden -> action` with tanh hidden units.
/// The output layer starts near zero with bias 0.5 so initial means sit in
/// the middle of the desirability range.
pub fn build_actor(cfg: &ScenarioConfig, trainer: &TrainerConfig, seed: u64) -> Result<GaussianPolicy> {
    let h = trainer.actor_hidden;
    let mut net = DenseNet::mlp(
        &[cfg.obs_dim(), h, h, cfg.action_dim()],
        Activation::Tanh,
        Activation::Identity,
    )?;
    net.init_uniform(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM, 0)));
    let last = net.layers().len() - 1;
    for w in net.weights_mut(last) {
        *w *= 0.01;
    }
    for b in net.bias_mut(last) {
        *b = 0.5;
    }
    Ok(GaussianPolicy::new(net, trainer.initial_log_std))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CriticArch {
    /// `O -> X -> X -> 1`, tanh hidden units.
    Classical { width: usize },
    /// `O -> 4L` (tanh, no bias), circuit core, then `4 -> H -> 1` (tanh
    /// hidden) or `4 -> 1` when `post_hidden` is zero.
    Quantum {
        layers: usize,
        scaling_fn: ScalingFn,
        post_hidden: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightCounts {
    pub classical: usize,
    pub quantum: usize,
}

impl WeightCounts {
    pub fn total(&self) -> usize {
        self.classical + self.quantum
    }
}

impl CriticArch {
    fn pre_layers(&self, global_obs_dim: usize) -> Vec<LayerSpec> {
        match *self {
            CriticArch::Classical { width } => {
                vec![LayerSpec::new(global_obs_dim, width, Activation::Tanh)]
            }
            CriticArch::Quantum { layers, .. } => {
                vec![LayerSpec::new(global_obs_dim, 4 * layers, Activation::Tanh).without_bias()]
            }
        }
    }

    fn post_layers(&self) -> Vec<LayerSpec> {
        match *self {
            CriticArch::Classical { width } => vec![
                LayerSpec::new(width, width, Activation::Tanh),
                LayerSpec::new(width, 1, Activation::Identity),
            ],
            CriticArch::Quantum { post_hidden: 0, .. } => {
                vec![LayerSpec::new(4, 1, Activation::Identity)]
            }
            CriticArch::Quantum { post_hidden, .. } => vec![
                LayerSpec::new(4, post_hidden, Activation::Tanh),
                LayerSpec::new(post_hidden, 1, Activation::Identity),
            ],
        }
    }

    /// Trainable weights split into classical (dense blocks and input
    /// scalings) and quantum (ansatz angles).
    pub fn weight_counts(&self, global_obs_dim: usize) -> WeightCounts {
        let dense: usize = self
            .pre_layers(global_obs_dim)
            .iter()
            .chain(&self.post_layers())
            .map(LayerSpec::parameter_count)
            .sum();
        match *self {
            CriticArch::Classical { .. } => WeightCounts {
                classical: dense,
                quantum: 0,
            },
            CriticArch::Quantum { layers, .. } => WeightCounts {
                classical: dense + 4 * layers,
                quantum: 12 * layers,
            },
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self, CriticArch::Quantum { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    arch: CriticArch,
    pre: DenseNet,
    circuit: Option<VqcSpec>,
    post: DenseNet,
    spsa: Option<Spsa>,
}

/// Loss of one minibatch together with its gradients.
#[derive(Debug, Clone)]
pub struct CriticGradient {
    pub loss: f64,
    /// Gradient over [`Critic::classical_params`].
    pub classical: Vec<f64>,
    /// SPSA estimate over the ansatz angles (quantum critics only).
    pub theta: Option<Vec<f64>>,
}

/// Per-sample clipped value loss and its derivative in the predicted value.
pub fn value_loss_term(value: f64, value_old: f64, target: f64, eps: f64) -> (f64, f64) {
    let unclipped = (value - target).powi(2);
    let clipped_v = value.clamp(value_old - eps, value_old + eps);
    let clipped = (clipped_v - target).powi(2);
    if unclipped >= clipped {
        (unclipped, 2.0 * (value - target))
    } else {
        (clipped, 0.0)
    }
}

/// Mean clipped value loss over aligned predictions, stale values and targets.
pub fn critic_loss(values: &[f64], values_old: &[f64], targets: &[f64], eps: f64) -> f64 {
    assert!(values.len() == values_old.len() && values.len() == targets.len());
    let n = values.len() as f64;
    values
        .iter()
        .zip(values_old)
        .zip(targets)
        .map(|((v, o), t)| value_loss_term(*v, *o, *t, eps).0)
        .sum::<f64>()
        / n
}

impl Critic {
    pub fn new(arch: CriticArch, global_obs_dim: usize, trainer: &TrainerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM, 1));
        let mut pre = DenseNet::new(arch.pre_layers(global_obs_dim))?;
        let mut post = DenseNet::new(arch.post_layers())?;
        pre.init_uniform(&mut rng);
        post.init_uniform(&mut rng);
        let (circuit, spsa) = match arch {
            CriticArch::Classical { width } => {
                if width == 0 {
                    return Err(Error::config("classical critic width must be positive"));
                }
                (None, None)
            }
            CriticArch::Quantum { layers, scaling_fn, .. } => {
                let mut spec = VqcSpec::new(layers, scaling_fn)?;
                for t in &mut spec.theta {
                    *t = rand::Rng::random_range(&mut rng, -0.1..0.1);
                }
                let spsa = Spsa::new(trainer.spsa, derive_seed(seed, SPSA_STREAM, 0));
                (Some(spec), Some(spsa))
            }
        };
        Ok(Self {
            arch,
            pre,
            circuit,
            post,
            spsa,
        })
    }

    pub fn arch(&self) -> CriticArch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.pre.input_dim()
    }

    pub fn circuit(&self) -> Option<&VqcSpec> {
        self.circuit.as_ref()
    }

    pub fn spsa(&self) -> Option<&Spsa> {
        self.spsa.as_ref()
    }

    pub fn weight_counts(&self) -> WeightCounts {
        WeightCounts {
            classical: self.classical_len(),
            quantum: self.circuit.as_ref().map_or(0, |c| c.theta.len()),
        }
    }

    fn classical_len(&self) -> usize {
        self.pre.parameter_count() + self.circuit.as_ref().map_or(0, |c| c.xi.len()) + self.post.parameter_count()
    }

    /// Pre-block parameters, input scalings, post-block parameters.
    pub fn classical_params(&self) -> Vec<f64> {
        let mut v = self.pre.params().to_vec();
        if let Some(c) = &self.circuit {
            v.extend_from_slice(&c.xi);
        }
        v.extend_from_slice(self.post.params());
        v
    }

    pub fn set_classical_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.classical_len());
        let a = self.pre.parameter_count();
        self.pre.set_params(&params[..a]);
        let mut b = a;
        if let Some(c) = &mut self.circuit {
            b += c.xi.len();
            c.xi.copy_from_slice(&params[a..b]);
        }
        self.post.set_params(&params[b..]);
    }

    pub fn theta(&self) -> Option<&[f64]> {
        self.circuit.as_ref().map(|c| c.theta.as_slice())
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        let c = self.circuit.as_mut().expect("classical critic has no angles");
        c.theta.copy_from_slice(theta);
    }

    /// `V(O)`.
    pub fn value(&self, global_obs: &[f64]) -> f64 {
        let h = self.pre.forward(global_obs);
        let core = match &self.circuit {
            None => h,
            Some(spec) => {
                let x = spec.scaled_features(&h);
                z_expectations(&spec.state_with(&spec.theta, &x))
            }
        };
        self.post.forward(&core)[0]
    }

    /// Clipped value loss of `samples` (global observation, stale value,
    /// target) and its gradients. Quantum critics issue exactly three batched
    /// circuit evaluations: the centre, `+c_k delta` and `-c_k delta`.
    pub fn loss_and_gradient(&mut self, samples: &[(&[f64], f64, f64)], eps: f64) -> Result<CriticGradient> {
        if samples.is_empty() {
            return Err(Error::contract("critic loss over an empty minibatch"));
        }
        match self.circuit.clone() {
            None => Ok(self.classical_gradient(samples, eps)),
            Some(spec) => self.hybrid_gradient(&spec, samples, eps),
        }
    }

    fn classical_gradient(&self, samples: &[(&[f64], f64, f64)], eps: f64) -> CriticGradient {
        let n = samples.len() as f64;
        let mut g_pre = vec![0.0; self.pre.parameter_count()];
        let mut g_post = vec![0.0; self.post.parameter_count()];
        let mut loss = 0.0;
        for &(obs, v_old, target) in samples {
            let pc = self.pre.forward_cached(obs);
            let qc = self.post.forward_cached(pc.output());
            let (l, dv) = value_loss_term(qc.output()[0], v_old, target, eps);
            loss += l / n;
            if dv != 0.0 {
                let dh = self.post.backward_accumulate(&qc, &[dv / n], &mut g_post);
                self.pre.backward_accumulate(&pc, &dh, &mut g_pre);
            }
        }
        g_pre.extend(g_post);
        CriticGradient {
            loss,
            classical: g_pre,
            theta: None,
        }
    }

    fn hybrid_gradient(&mut self, spec: &VqcSpec, samples: &[(&[f64], f64, f64)], eps: f64) -> Result<CriticGradient> {
        let n = samples.len() as f64;
        let spsa = self.spsa.as_mut().expect("quantum critic owns an SPSA state");
        let ck = spsa.ck();
        let d_theta = spsa.rademacher(spec.theta.len());
        let d_x: Vec<Vec<f64>> = samples.iter().map(|_| spsa.rademacher(spec.input_dim())).collect();
        spsa.record_evaluations(3);

        let shifted = |base: &[f64], delta: &[f64], sign: f64| -> Vec<f64> {
            base.iter().zip(delta).map(|(b, d)| b + sign * ck * d).collect()
        };
        let theta_plus = shifted(&spec.theta, &d_theta, 1.0);
        let theta_minus = shifted(&spec.theta, &d_theta, -1.0);

        let mut g_pre = vec![0.0; self.pre.parameter_count()];
        let mut g_xi = vec![0.0; spec.xi.len()];
        let mut g_post = vec![0.0; self.post.parameter_count()];
        let (mut loss, mut loss_plus, mut loss_minus) = (0.0, 0.0, 0.0);
        for (&(obs, v_old, target), dx) in samples.iter().zip(&d_x) {
            let pc = self.pre.forward_cached(obs);
            let o = pc.output();
            let u: Vec<f64> = o.iter().zip(&spec.xi).map(|(a, b)| a * b).collect();
            let x: Vec<f64> = u.iter().map(|&v| spec.scaling_fn.apply(v)).collect();

            let z = z_expectations(&spec.state_with(&spec.theta, &x));
            let qc = self.post.forward_cached(&z);
            let (l, dv) = value_loss_term(qc.output()[0], v_old, target, eps);
            if dv != 0.0 {
                self.post.backward_accumulate(&qc, &[dv / n], &mut g_post);
            }

            let perturbed = |theta: &[f64], sign: f64| -> f64 {
                let z = z_expectations(&spec.state_with(theta, &shifted(&x, dx, sign)));
                value_loss_term(self.post.forward(&z)[0], v_old, target, eps).0
            };
            let lp = perturbed(&theta_plus, 1.0);
            let lm = perturbed(&theta_minus, -1.0);
            if !(l.is_finite() && lp.is_finite() && lm.is_finite()) {
                return Err(Error::Training("non-finite critic loss".into()));
            }
            loss += l / n;
            loss_plus += lp / n;
            loss_minus += lm / n;

            let diff = (lp - lm) / (2.0 * ck * n);
            let mut d_o = vec![0.0; o.len()];
            for k in 0..o.len() {
                let du = diff / dx[k] * spec.scaling_fn.derivative(u[k]);
                g_xi[k] += du * o[k];
                d_o[k] = du * spec.xi[k];
            }
            self.pre.backward_accumulate(&pc, &d_o, &mut g_pre);
        }
        let diff = (loss_plus - loss_minus) / (2.0 * ck);
        let g_theta = d_theta.iter().map(|d| diff / d).collect();
        g_pre.extend(g_xi);
        g_pre.extend(g_post);
        Ok(CriticGradient {
            loss,
            classical: g_pre,
            theta: Some(g_theta),
        })
    }

    /// SPSA angle update `theta <- theta - a_k g`, then advance `k`.
    fn spsa_step(&mut self, g_theta: &[f64]) {
        let spsa = self.spsa.as_mut().expect("quantum critic owns an SPSA state");
        let ak = spsa.ak();
        let c = self.circuit.as_mut().expect("quantum critic owns a circuit");
        for (t, g) in c.theta.iter_mut().zip(g_theta) {
            *t -= ak * g;
        }
        spsa.advance();
    }

    pub fn to_checkpoint(&self) -> CriticCheckpoint {
        CriticCheckpoint {
            version: crate::nn::CHECKPOINT_VERSION,
            arch: self.arch,
            pre: self.pre.to_checkpoint(),
            circuit: self.circuit.clone(),
            post: self.post.to_checkpoint(),
            spsa_iteration: self.spsa.as_ref().map(Spsa::iteration),
        }
    }

    /// Rebuilds a critic. The SPSA random stream restarts from `seed`; the
    /// gain schedule resumes at the stored iteration.
    pub fn from_checkpoint(ckpt: &CriticCheckpoint, trainer: &TrainerConfig, seed: u64) -> Result<Self> {
        let pre = DenseNet::from_checkpoint(&ckpt.pre)?;
        let post = DenseNet::from_checkpoint(&ckpt.post)?;
        if pre.layers() != ckpt.arch.pre_layers(pre.input_dim()).as_slice()
            || post.layers() != ckpt.arch.post_layers().as_slice()
        {
            return Err(Error::config("critic checkpoint layers do not match its architecture"));
        }
        let spsa = match (&ckpt.circuit, ckpt.arch) {
            (Some(spec), CriticArch::Quantum { layers, scaling_fn, .. }) => {
                spec.validate()?;
                if spec.n_layers != layers || spec.scaling_fn != scaling_fn {
                    return Err(Error::config(
                        "critic checkpoint circuit does not match its architecture",
                    ));
                }
                let mut s = Spsa::new(trainer.spsa, derive_seed(seed, SPSA_STREAM, 0));
                for _ in 0..ckpt.spsa_iteration.unwrap_or(0) {
                    s.advance();
                }
                Some(s)
            }
            (None, CriticArch::Classical { .. }) => None,
            _ => {
                return Err(Error::config(
                    "critic checkpoint circuit does not match its architecture",
                ))
            }
        };
        Ok(Self {
            arch: ckpt.arch,
            pre,
            circuit: ckpt.circuit.clone(),
            post,
            spsa,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticCheckpoint {
    pub version: u32,
    pub arch: CriticArch,
    pub pre: NetCheckpoint,
    pub circuit: Option<VqcSpec>,
    pub post: NetCheckpoint,
    pub spsa_iteration: Option<u64>,
}

impl CriticCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One environment step as seen by the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub global_obs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

/// One aircraft's decision at a step; the shared step quantities (`O`, `R`,
/// `V`, `A`, `R^`) live in `steps[step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub step: usize,
    pub agent: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob_old: f64,
    pub mean_old: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub steps: Vec<StepRecord>,
    pub agents: Vec<AgentRecord>,
    pub old_log_std: Vec<f64>,
    /// Critic value of the state following the last step, used when the
    /// batch ends inside an episode.
    pub bootstrap: f64,
    /// Cumulative rewards of episodes completed during collection.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn advantage(&self, agent_record: usize) -> f64 {
        self.steps[self.agents[agent_record].step].advantage
    }

    /// Appends a batch collected right after this one.
    pub fn extend(&mut self, other: RolloutBatch) {
        let offset = self.steps.len();
        self.steps.extend(other.steps);
        self.agents.extend(other.agents.into_iter().map(|mut a| {
            a.step += offset;
            a
        }));
        self.old_log_std = other.old_log_std;
        self.bootstrap = other.bootstrap;
        self.episode_returns.extend(other.episode_returns);
    }

    /// Fills advantages and returns, episode by episode.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let mut start = 0;
        while start < self.steps.len() {
            let mut end = start;
            while end < self.steps.len() && !self.steps[end].done {
                end += 1;
            }
            let (stop, bootstrap) = if end < self.steps.len() {
                (end + 1, 0.0)
            } else {
                (end, self.bootstrap)
            };
            let seg = &self.steps[start..stop];
            let rewards: Vec<f64> = seg.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = seg.iter().map(|s| s.value).collect();
            let (adv, ret) = gae(&rewards, &values, bootstrap, gamma, lambda);
            for (s, (a, r)) in self.steps[start..stop].iter_mut().zip(adv.into_iter().zip(ret)) {
                s.advantage = a;
                s.ret = r;
            }
            start = stop;
        }
    }

    /// Rescales step advantages to zero mean and unit std, weighting each
    /// step by its number of agent records.
    pub fn normalize_advantages(&mut self) {
        if self.agents.is_empty() {
            return;
        }
        let n = self.agents.len() as f64;
        let mean = (0..self.agents.len()).map(|i| self.advantage(i)).sum::<f64>() / n;
        let var = (0..self.agents.len())
            .map(|i| (self.advantage(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-8);
        for s in &mut self.steps {
            s.advantage = (s.advantage - mean) / std;
        }
    }
}

/// Generalised advantage estimation over one episode segment:
/// `delta_t = r_t + gamma V_{t+1} - V_t`, `A_t = sum (gamma lambda)^l delta_{t+l}`,
/// `R^_t = A_t + V_t`, with `V_T = bootstrap`.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

fn global_observation(obs: &[Observation]) -> Vec<f64> {
    obs.iter().flat_map(|o| o.values.iter().copied()).collect()
}

/// Episode source for training: auto-resets on fresh seeded worlds.
#[derive(Debug, Clone)]
pub struct EpisodeRunner {
    env: FanetEnv,
    seed: u64,
    episode: u64,
    obs: Vec<Observation>,
    cr: f64,
}

impl EpisodeRunner {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Self> {
        let mut env = FanetEnv::new(cfg, derive_seed(seed, WORLD_STREAM, 0))?;
        let obs = env.reset(derive_seed(seed, WORLD_STREAM, 0))?;
        Ok(Self {
            env,
            seed,
            episode: 0,
            obs,
            cr: 0.0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.env.config()
    }

    pub fn episodes_started(&self) -> u64 {
        self.episode + 1
    }
}

/// Runs `steps` environment steps with the shared actor sampling each
/// aircraft's action from its local observation and the critic scoring the
/// concatenated observation once per step. Advantages are left at zero.
pub fn collect_rollout(
    runner: &mut EpisodeRunner,
    actor: &GaussianPolicy,
    critic: &Critic,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBatch> {
    let n_aircraft = runner.config().n_aircraft;
    let mut batch = RolloutBatch {
        old_log_std: actor.log_std.clone(),
        ..RolloutBatch::default()
    };
    for _ in 0..steps {
        let global_obs = global_observation(&runner.obs);
        let value = critic.value(&global_obs);
        let step = batch.steps.len();
        let mut joint = Vec::with_capacity(n_aircraft);
        for (agent, o) in runner.obs.iter().enumerate() {
            let mean = actor.mean(&o.values);
            let action: Vec<f64> = mean
                .iter()
                .zip(&actor.log_std)
                .map(|(m, s)| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                    m + s.exp() * z
                })
                .collect();
            let log_prob_old = actor.log_prob(&mean, &action);
            joint.push(ActionVector::new(action.clone()));
            batch.agents.push(AgentRecord {
                step,
                agent,
                obs: o.values.clone(),
                action,
                log_prob_old,
                mean_old: mean,
            });
        }
        let out = runner.env.step(&joint)?;
        runner.cr += out.ptg[..n_aircraft].iter().filter(|&&p| p).count() as f64;
        batch.steps.push(StepRecord {
            global_obs,
            reward: out.reward,
            value,
            done: out.done,
            advantage: 0.0,
            ret: 0.0,
        });
        if out.done {
            batch.episode_returns.push(runner.cr);
            runner.cr = 0.0;
            runner.episode += 1;
            runner.obs = runner
                .env
                .reset(derive_seed(runner.seed, WORLD_STREAM, runner.episode))?;
        } else {
            runner.obs = out.observations;
        }
    }
    batch.bootstrap = critic.value(&global_observation(&runner.obs));
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    /// Gradient over [`GaussianPolicy::flat_params`].
    pub grad: Vec<f64>,
    /// Mean `KL(pi_old || pi_new)` over the samples.
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// False when some probability ratio was not finite.
    pub finite: bool,
}

/// `KL(old || new)` between diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for k in 0..mean_old.len() {
        let var_old = (2.0 * log_std_old[k]).exp();
        let var_new = (2.0 * log_std_new[k]).exp();
        let d = mean_old[k] - mean_new[k];
        kl += log_std_new[k] - log_std_old[k] + (var_old + d * d) / (2.0 * var_new) - 0.5;
    }
    kl
}

/// Clipped surrogate with entropy bonus and KL penalty over the agent
/// records `indices`:
/// `-mean(min(r A, clip(r, 1-eps, 1+eps) A)) - sigma S + beta mean KL(old || new)`.
pub fn actor_loss(policy: &GaussianPolicy, batch: &RolloutBatch, indices: &[usize], cfg: &TrainerConfig) -> ActorLoss {
    let n = indices.len() as f64;
    let n_net = policy.mean_net.parameter_count();
    let dim = policy.action_dim();
    let mut grad = vec![0.0; n_net + dim];
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut finite = true;
    let var_new: Vec<f64> = policy.log_std.iter().map(|s| (2.0 * s).exp()).collect();
    let var_old: Vec<f64> = batch.old_log_std.iter().map(|s| (2.0 * s).exp()).collect();
    for &i in indices {
        let rec = &batch.agents[i];
        let adv = batch.advantage(i);
        let cache = policy.mean_net.forward_cached(&rec.obs);
        let mean = cache.output();
        let lp = policy.log_prob(mean, &rec.action);
        let ratio = (lp - rec.log_prob_old).exp();
        if !ratio.is_finite() {
            finite = false;
            continue;
        }
        let r_clip = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let unclipped = ratio * adv;
        let surrogate = unclipped.min(r_clip * adv);
        let g_lp = if unclipped <= r_clip * adv { adv * ratio } else { 0.0 };
        if r_clip != ratio {
            clipped += 1;
        }
        let kl = gaussian_kl(&rec.mean_old, &batch.old_log_std, mean, &policy.log_std);
        loss += (-surrogate + cfg.kl_coef * kl) / n;
        kl_sum += kl;

        let (dlp_dm, dlp_ds) = gaussian_log_prob_grad(mean, &policy.log_std, &rec.action);
        let mut d_mean = vec![0.0; dim];
        for k in 0..dim {
            let diff = mean[k] - rec.mean_old[k];
            d_mean[k] = (-g_lp * dlp_dm[k] + cfg.kl_coef * diff / var_new[k]) / n;
            let dkl_ds = 1.0 - (var_old[k] + diff * diff) / var_new[k];
            grad[n_net + k] += (-g_lp * dlp_ds[k] + cfg.kl_coef * dkl_ds) / n;
        }
        policy.mean_net.backward_accumulate(&cache, &d_mean, &mut grad[..n_net]);
    }
    let entropy = policy.entropy();
    loss -= cfg.entropy_coef * entropy;
    for g in &mut grad[n_net..] {
        *g -= cfg.entropy_coef;
    }
    ActorLoss {
        loss,
        grad,
        kl: kl_sum / n,
        entropy,
        clip_fraction: clipped as f64 / n,
        finite,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub skipped_minibatches: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

/// Deterministic evaluation: every aircraft plays the actor's mean action
/// on its local observation. Episode `k` uses a world derived from `seed`.
pub fn evaluate(actor: &GaussianPolicy, scenario: &ScenarioConfig, n_episodes: usize, seed: u64) -> Result<EvalStats> {
    if n_episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes {
        let mut env = FanetEnv::new(scenario.clone(), derive_seed(seed, EVAL_STREAM, k as u64))?;
        let mut obs = env.observations();
        let mut cr = 0.0;
        loop {
            let joint: Vec<ActionVector> = obs.iter().map(|o| ActionVector::new(actor.mean(&o.values))).collect();
            let out = env.step(&joint)?;
            cr += out.ptg[..scenario.n_aircraft].iter().filter(|&&p| p).count() as f64;
            if out.done {
                break;
            }
            obs = out.observations;
        }
        returns.push(cr);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalStats {
        mean,
        std,
        episodes: n_episodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub cr_mean: f64,
    pub cr_std: f64,
    /// Loss of the latest update (NaN before the first one).
    pub actor_loss: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    scenario: ScenarioConfig,
    seed: u64,
    pub actor: GaussianPolicy,
    pub critic: Critic,
    actor_opt: Adam,
    critic_opt: Adam,
    runner: EpisodeRunner,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    env_steps: u64,
    last: Option<UpdateStats>,
}

impl Trainer {
    pub fn new(config: TrainerConfig, scenario: ScenarioConfig, arch: CriticArch, seed: u64) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let actor = build_actor(&scenario, &config, seed)?;
        let critic = Critic::new(arch, scenario.global_obs_dim(), &config, seed)?;
        let actor_opt = Adam::new(actor.parameter_count(), config.adam());
        let critic_opt = Adam::new(critic.classical_len(), config.adam());
        Ok(Self {
            config,
            runner: EpisodeRunner::new(scenario.clone(), seed)?,
            scenario,
            seed,
            actor,
            critic,
            actor_opt,
            critic_opt,
            action_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, ACTION_STREAM, 0)),
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM, 0)),
            env_steps: 0,
            last: None,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn collect(&mut self, steps: usize) -> Result<RolloutBatch> {
        let batch = collect_rollout(&mut self.runner, &self.actor, &self.critic, steps, &mut self.action_rng)?;
        self.env_steps += steps as u64;
        Ok(batch)
    }

    /// PPO epochs over a collected batch. A non-finite critic loss aborts the
    /// whole update and restores the previous parameters; minibatches with a
    /// non-finite probability ratio are skipped and reported as warnings.
    pub fn update(&mut self, batch: &mut RolloutBatch) -> Result<UpdateStats> {
        let snapshot = (
            self.actor.clone(),
            self.critic.clone(),
            self.actor_opt.clone(),
            self.critic_opt.clone(),
        );
        match self.update_inner(batch) {
            Ok(stats) => {
                self.last = Some(stats.clone());
                Ok(stats)
            }
            Err(e) => {
                (self.actor, self.critic, self.actor_opt, self.critic_opt) = snapshot;
                Err(e)
            }
        }
    }

    fn update_inner(&mut self, batch: &mut RolloutBatch) -> Result<UpdateStats> {
        let cfg = self.config;
        batch.compute_advantages(cfg.gamma, cfg.gae_lambda);
        batch.normalize_advantages();
        let mut stats = UpdateStats::default();
        let (mut n_actor, mut n_critic) = (0usize, 0usize);
        let mut agent_idx: Vec<usize> = (0..batch.agents.len()).collect();
        let mut step_idx: Vec<usize> = (0..batch.steps.len()).collect();
        for _ in 0..cfg.epochs {
            agent_idx.shuffle(&mut self.shuffle_rng);
            for mb in agent_idx.chunks(cfg.minibatch_size) {
                let out = actor_loss(&self.actor, batch, mb, &cfg);
                if !out.finite || !out.loss.is_finite() {
                    stats.skipped_minibatches += 1;
                    stats
                        .warnings
                        .push("non-finite probability ratio; actor minibatch skipped".into());
                    continue;
                }
                let mut params = self.actor.flat_params();
                if let Err(e) = self.actor_opt.step(&mut params, &out.grad) {
                    stats.skipped_minibatches += 1;
                    stats.warnings.push(format!("actor step skipped: {e}"));
                    continue;
                }
                self.actor.set_flat_params(&params);
                stats.actor_loss += out.loss;
                stats.kl = out.kl;
                stats.entropy = out.entropy;
                stats.clip_fraction = out.clip_fraction;
                stats.actor_grad_norm = l2_norm(&out.grad);
                n_actor += 1;
            }
            step_idx.shuffle(&mut self.shuffle_rng);
            for mb in step_idx.chunks(cfg.minibatch_size) {
                let samples: Vec<(&[f64], f64, f64)> = mb
                    .iter()
                    .map(|&i| {
                        let s = &batch.steps[i];
                        (s.global_obs.as_slice(), s.value, s.ret)
                    })
                    .collect();
                let g = self.critic.loss_and_gradient(&samples, cfg.clip_eps)?;
                if !g.loss.is_finite() {
                    return Err(Error::Training("non-finite critic loss".into()));
                }
                let mut params = self.critic.classical_params();
                self.critic_opt.step(&mut params, &g.classical)?;
                self.critic.set_classical_params(&params);
                if let Some(gt) = &g.theta {
                    self.critic.spsa_step(gt);
                }
                stats.critic_loss += g.loss;
                stats.critic_grad_norm = l2_norm(&g.classical);
                n_critic += 1;
            }
        }
        stats.actor_loss /= n_actor.max(1) as f64;
        stats.critic_loss /= n_critic.max(1) as f64;
        Ok(stats)
    }

    /// Evaluation of the current actor on this run's fixed evaluation worlds.
    pub fn evaluate_now(&self) -> Result<EvalStats> {
        evaluate(&self.actor, &self.scenario, self.config.eval_episodes, self.seed)
    }

    /// Trains for `total_steps` environment steps, calling `on_eval` with a
    /// curve point every `eval_interval` steps.
    pub fn train<F>(&mut self, total_steps: u64, mut on_eval: F) -> Result<Vec<CurvePoint>>
    where
        F: FnMut(&CurvePoint) -> Result<()>,
    {
        let interval = self.config.eval_interval as u64;
        let mut curve = Vec::new();
        let mut pending: Option<RolloutBatch> = None;
        let mut collected = 0usize;
        while self.env_steps < total_steps {
            let to_eval = interval - self.env_steps % interval;
            let to_update = (self.config.rollout_steps - collected) as u64;
            let chunk = to_eval.min(to_update).min(total_steps - self.env_steps) as usize;
            let part = self.collect(chunk)?;
            collected += chunk;
            match pending.as_mut() {
                Some(b) => b.extend(part),
                None => pending = Some(part),
            }
            if collected == self.config.rollout_steps {
                let mut batch = pending.take().expect("collected steps form a batch");
                self.update(&mut batch)?;
                collected = 0;
            }
            if self.env_steps.is_multiple_of(interval) {
                let ev = self.evaluate_now()?;
                let (actor_loss, critic_loss) = self
                    .last
                    .as_ref()
                    .map_or((f64::NAN, f64::NAN), |s| (s.actor_loss, s.critic_loss));
                let point = CurvePoint {
                    env_steps: self.env_steps,
                    cr_mean: ev.mean,
                    cr_std: ev.std,
                    actor_loss,
                    critic_loss,
                };
                on_eval(&point)?;
                curve.push(point);
            }
        }
        Ok(curve)
    }
}
