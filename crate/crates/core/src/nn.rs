//! Small dense networks with exact reverse-mode gradients, a diagonal
//! Gaussian policy head and the Adam optimizer.
//!
//! Parameters of a [`DenseNet`] live in one flat vector. Each layer owns a
//! contiguous block laid out as its row-major `output x input` weight matrix
//! followed by the bias vector (when the layer has one).

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            output,
            activation,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.input * self.output + if self.bias { self.output } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer inputs recorded by [`DenseNet::forward_cached`]; the last entry
/// is the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input at least")
    }
}

impl DenseNet {
    /// Zero-initialised network. Fails when consecutive layer sizes do not
    /// chain.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].output != w[1].input {
                return Err(Error::config(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].output, w[1].input
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.parameter_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Multi-layer perceptron over `sizes` with `hidden` activations between
    /// layers and `output` on the last one.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("an mlp needs input and output sizes"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                LayerSpec::new(sizes[i], sizes[i + 1], act)
            })
            .collect();
        Self::new(layers)
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (i, l) in self.layers.iter().enumerate() {
            let bound = 1.0 / (l.input as f64).sqrt();
            let start = self.offsets[i];
            for p in &mut self.params[start..start + l.parameter_count()] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len(), "parameter length mismatch");
        self.params.copy_from_slice(params);
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        let s = self.offsets[layer];
        &self.params[s..s + l.input * l.output]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        let s = self.offsets[layer];
        &mut self.params[s..s + l.input * l.output]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        let s = self.offsets[layer] + l.input * l.output;
        if l.bias {
            &self.params[s..s + l.output]
        } else {
            &[]
        }
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        let s = self.offsets[layer] + l.input * l.output;
        if l.bias {
            &mut self.params[s..s + l.output]
        } else {
            &mut []
        }
    }

    fn apply_layer(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let l = &self.layers[layer];
        let w = self.weights(layer);
        let b = self.bias(layer);
        (0..l.output)
            .map(|r| {
                let row = &w[r * l.input..(r + 1) * l.input];
                let mut z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                if l.bias {
                    z += b[r];
                }
                match l.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                }
            })
            .collect()
    }

    /// # Panics
    /// When `input.len()` differs from the first layer's input size.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.check_input(input);
        let mut x = input.to_vec();
        for i in 0..self.layers.len() {
            x = self.apply_layer(i, &x);
        }
        x
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        self.check_input(input);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for i in 0..self.layers.len() {
            let next = self.apply_layer(i, &activations[i]);
            activations.push(next);
        }
        ForwardCache { activations }
    }

    fn check_input(&self, input: &[f64]) {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input length {} does not match network input {}",
            input.len(),
            self.input_dim()
        );
    }

    /// Adds the parameter gradient of `upstream . output` into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward_accumulate(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim());
        assert_eq!(grads.len(), self.params.len());
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let out = &cache.activations[i + 1];
            let inp = &cache.activations[i];
            if l.activation == Activation::Tanh {
                for (d, y) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - y * y;
                }
            }
            let s = self.offsets[i];
            let (gw, rest) = grads[s..].split_at_mut(l.input * l.output);
            for r in 0..l.output {
                let d = delta[r];
                if d != 0.0 {
                    for (g, x) in gw[r * l.input..(r + 1) * l.input].iter_mut().zip(inp) {
                        *g += d * x;
                    }
                }
            }
            if l.bias {
                for (g, d) in rest[..l.output].iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let w = self.weights(i);
            let mut prev = vec![0.0; l.input];
            for r in 0..l.output {
                let d = delta[r];
                if d != 0.0 {
                    for (p, wv) in prev.iter_mut().zip(&w[r * l.input..(r + 1) * l.input]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// `(param_grads, input_grad)` of the scalar `upstream . output`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(cache, upstream, &mut grads);
        (grads, input_grad)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            version: CHECKPOINT_VERSION,
            layers: (0..self.layers.len())
                .map(|i| LayerCheckpoint {
                    spec: self.layers[i],
                    weights: self.weights(i).to_vec(),
                    biases: self.bias(i).to_vec(),
                })
                .collect(),
            log_std: None,
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let mut net = Self::new(ckpt.layers.iter().map(|l| l.spec).collect())?;
        for (i, l) in ckpt.layers.iter().enumerate() {
            if l.weights.len() != l.spec.input * l.spec.output
                || l.biases.len() != if l.spec.bias { l.spec.output } else { 0 }
            {
                return Err(Error::config(format!("layer {i} has malformed arrays")));
            }
            net.weights_mut(i).copy_from_slice(&l.weights);
            net.bias_mut(i).copy_from_slice(&l.biases);
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    #[serde(flatten)]
    pub spec: LayerSpec,
    /// Row-major `output x input`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Flat JSON checkpoint of a network and, for policies, its log-std vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub version: u32,
    pub layers: Vec<LayerCheckpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
}

impl NetCheckpoint {
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum::<usize>()
            + self.log_std.as_ref().map_or(0, Vec::len)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian policy with a state-independent trainable log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: DenseNet,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean_net: DenseNet, initial_log_std: f64) -> Self {
        let dim = mean_net.output_dim();
        Self {
            mean_net,
            log_std: vec![initial_log_std; dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.mean_net.parameter_count() + self.log_std.len()
    }

    /// Network parameters followed by the log-std entries.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.mean_net.params().to_vec();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let n = self.mean_net.parameter_count();
        assert_eq!(params.len(), n + self.log_std.len());
        self.mean_net.set_params(&params[..n]);
        self.log_std.copy_from_slice(&params[n..]);
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.mean_net.forward(obs)
    }

    /// Differential entropy `sum(log_std + 0.5 ln(2 pi e))`.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + HALF_LOG_2PI + 0.5).sum()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        gaussian_log_prob(mean, &self.log_std, action)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let mean = self.mean(obs);
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s.exp() * z
            })
            .collect();
        let lp = self.log_prob(&mean, &action);
        (action, lp)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        let mut c = self.mean_net.to_checkpoint();
        c.log_std = Some(self.log_std.clone());
        c
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        let mean_net = DenseNet::from_checkpoint(ckpt)?;
        let log_std = ckpt
            .log_std
            .clone()
            .ok_or_else(|| Error::config("policy checkpoint lacks log_std"))?;
        if log_std.len() != mean_net.output_dim() {
            return Err(Error::config("log_std length does not match action dim"));
        }
        Ok(Self { mean_net, log_std })
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - HALF_LOG_2PI
        })
        .sum()
}

/// Gradients of the Gaussian log-density with respect to the mean and the
/// log-std, returned as `(d_mean, d_log_std)`.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let var = (2.0 * s).exp();
        let diff = a - m;
        dm.push(diff / var);
        ds.push(diff * diff / var - 1.0);
    }
    (dm, ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update in place. Rejects non-finite gradients
    /// without touching the parameters or the moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at index {i}")));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Euclidean norm, used for gradient statistics.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_net(seed: u64) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DenseNet::mlp(&[5, 7, 6, 3], Activation::Tanh, Activation::Identity).unwrap();
        net.init_uniform(&mut rng);
        net
    }

    #[test]
    fn layer_chain_is_checked() {
        let bad = DenseNet::new(vec![
            LayerSpec::new(3, 4, Activation::Tanh),
            LayerSpec::new(5, 1, Activation::Identity),
        ]);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::mlp(&[4, 3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_echoes_input() {
        let mut net = DenseNet::new(vec![LayerSpec::new(3, 3, Activation::Identity)]).unwrap();
        for (i, w) in net.weights_mut(0).iter_mut().enumerate() {
            *w = if i % 4 == 0 { 1.0 } else { 0.0 };
        }
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn parameter_count_sums_layers() {
        let net = DenseNet::new(vec![
            LayerSpec::new(52, 4, Activation::Tanh).without_bias(),
            LayerSpec::new(4, 3, Activation::Tanh),
            LayerSpec::new(3, 1, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(net.parameter_count(), 208 + 15 + 4);
        assert_eq!(net.to_checkpoint().parameter_count(), net.parameter_count());
    }

    #[test]
    fn linear_net_input_grad_is_transpose_product() {
        let mut net = DenseNet::new(vec![LayerSpec::new(3, 2, Activation::Identity)]).unwrap();
        net.weights_mut(0).copy_from_slice(&[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]);
        let (_, gx) = net.backward(&cache, &[2.0, -1.0]);
        assert_eq!(gx, vec![2.0 + 1.0, 4.0 - 0.5, 6.0 - 4.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = random_net(1);
        let cache = net.forward_cached(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let (g, gx) = net.backward(&cache, &[0.0; 3]);
        assert!(g.iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    #[should_panic(expected = "input length")]
    fn forward_rejects_wrong_length() {
        random_net(0).forward(&[1.0, 2.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = DenseNet::mlp(&[4, 6, 2], Activation::Tanh, Activation::Identity).unwrap();
        net.init_uniform(&mut rng);
        let policy = GaussianPolicy::new(net, -0.7);
        let json = serde_json::to_string(&policy.to_checkpoint()).unwrap();
        let back: NetCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(GaussianPolicy::from_checkpoint(&back).unwrap(), policy);
        let mut bad = back.clone();
        bad.version = 99;
        assert!(DenseNet::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn log_prob_at_mean() {
        let net = DenseNet::mlp(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        let policy = GaussianPolicy::new(net, -0.3);
        let mean = vec![0.2, -0.1, 0.4];
        let expected = -3.0 * (-0.3 + 0.5 * (2.0 * PI).ln());
        assert!((policy.log_prob(&mean, &mean) - expected).abs() < 1e-14);
    }

    #[test]
    fn vanishing_std_samples_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::mlp(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        net.init_uniform(&mut rng);
        let policy = GaussianPolicy::new(net, f64::NEG_INFINITY);
        let (a, _) = policy.sample_action(&[0.3, 0.4], &mut rng);
        assert_eq!(a, policy.mean(&[0.3, 0.4]));
    }

    #[test]
    fn sample_mean_matches_policy_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DenseNet::mlp(&[2, 2], Activation::Tanh, Activation::Identity).unwrap();
        net.init_uniform(&mut rng);
        let policy = GaussianPolicy::new(net, 0.4f64.ln());
        let obs = [0.7, -0.2];
        let mean = policy.mean(&obs);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let (a, _) = policy.sample_action(&obs, &mut rng);
            acc[0] += a[0];
            acc[1] += a[1];
        }
        for d in 0..2 {
            let emp = acc[d] / n as f64;
            assert!((emp - mean[d]).abs() < 3.0 * 0.4 / (n as f64).sqrt());
        }
    }

    #[test]
    fn entropy_closed_form() {
        let net = DenseNet::mlp(&[2, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut p = GaussianPolicy::new(net, 0.0);
        p.log_std = vec![0.1, -0.4];
        let expected = -0.3 + (2.0 * PI * std::f64::consts::E).ln();
        assert!((p.entropy() - expected).abs() < 1e-14);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(3, cfg);
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &[0.5, -3.0, 100.0]).unwrap();
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - s * cfg.lr).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        assert!(matches!(adam.step(&mut p, &[f64::NAN, 0.0]), Err(Error::Training(_))));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let target = [1.0, -2.0, 0.5, 3.0];
        let loss = |p: &[f64]| -> f64 { p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum() };
        let mut adam = Adam::new(
            4,
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
        );
        let mut p = vec![0.0; 4];
        let mut prev = loss(&p);
        let start = prev;
        for step in 0..500 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.step(&mut p, &g).unwrap();
            let l = loss(&p);
            if step >= 10 {
                assert!(l <= prev + 1e-12, "loss rose at step {step}: {prev} -> {l}");
            }
            prev = l;
        }
        assert!(prev < 0.1 * start);
    }
}
