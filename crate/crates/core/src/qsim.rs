//! Statevector simulation of the data-reuploading critic circuit and the
//! SPSA rule used to train its rotation angles.
//!
//! Qubit `q` is bit `q` of the basis-state index (little-endian).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of qubits of the critic core.
pub const N_QUBITS: usize = 4;
/// Trainable ansatz angles per layer: three Euler angles on each qubit.
pub const ANGLES_PER_LAYER: usize = 3 * N_QUBITS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    H(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Cnot { control: usize, target: usize },
    CPhase { a: usize, b: usize, angle: f64 },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => vec![q],
            Gate::Cnot { control, target } => vec![control, target],
            Gate::CPhase { a, b, .. } => vec![a, b],
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        if let Some(q) = qs.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::contract(format!("qubit {q} out of range for {n_qubits} qubits")));
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(Error::contract(format!("two-qubit gate acts twice on qubit {}", qs[0])));
        }
        Ok(())
    }

    /// 2x2 matrix `[[m00, m01], [m10, m11]]` of a single-qubit gate.
    pub fn single_qubit_matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        match *self {
            Gate::H(_) => {
                let h = c(FRAC_1_SQRT_2, 0.0);
                Some([[h, h], [h, -h]])
            }
            Gate::Rx(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                Some([[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]])
            }
            Gate::Ry(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                Some([[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]])
            }
            Gate::Rz(_, t) => Some([
                [Complex64::from_polar(1.0, -t / 2.0), c(0.0, 0.0)],
                [c(0.0, 0.0), Complex64::from_polar(1.0, t / 2.0)],
            ]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        assert!(n_qubits > 0 && n_qubits <= 20, "unsupported qubit count");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { n_qubits, amplitudes }
    }

    /// Wraps raw amplitudes; fails unless the length is a power of two and
    /// the vector is normalized to within `1e-10`.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::contract("amplitude count must be a power of two"));
        }
        let s = Self {
            n_qubits: len.trailing_zeros() as usize,
            amplitudes,
        };
        if (s.norm_sqr() - 1.0).abs() > 1e-10 {
            return Err(Error::contract("state is not normalized"));
        }
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &QuantumState) -> f64 {
        assert_eq!(self.amplitudes.len(), other.amplitudes.len());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm_sqr()
    }

    /// `<Z_q>`.
    pub fn expectation_z(&self, q: usize) -> f64 {
        assert!(q < self.n_qubits);
        let bit = 1 << q;
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum()
    }

    /// Applies one gate in place.
    ///
    /// # Panics
    /// On out-of-range qubits or a two-qubit gate naming one qubit twice.
    pub fn apply(&mut self, gate: &Gate) {
        if let Err(e) = gate.validate(self.n_qubits) {
            panic!("{e}");
        }
        match *gate {
            Gate::Rz(q, t) => {
                let bit = 1 << q;
                let lo = Complex64::from_polar(1.0, -t / 2.0);
                let hi = Complex64::from_polar(1.0, t / 2.0);
                for (i, a) in self.amplitudes.iter_mut().enumerate() {
                    *a *= if i & bit == 0 { lo } else { hi };
                }
            }
            Gate::H(q) | Gate::Rx(q, _) | Gate::Ry(q, _) => {
                let m = gate.single_qubit_matrix().expect("single-qubit gate");
                let bit = 1 << q;
                for i in 0..self.amplitudes.len() {
                    if i & bit == 0 {
                        let a0 = self.amplitudes[i];
                        let a1 = self.amplitudes[i | bit];
                        self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
                        self.amplitudes[i | bit] = m[1][0] * a0 + m[1][1] * a1;
                    }
                }
            }
            Gate::Cnot { control, target } => {
                let (cb, tb) = (1 << control, 1 << target);
                for i in 0..self.amplitudes.len() {
                    if i & cb != 0 && i & tb == 0 {
                        self.amplitudes.swap(i, i | tb);
                    }
                }
            }
            Gate::CPhase { a, b, angle } => {
                let mask = (1 << a) | (1 << b);
                let phase = Complex64::from_polar(1.0, angle);
                for (i, amp) in self.amplitudes.iter_mut().enumerate() {
                    if i & mask == mask {
                        *amp *= phase;
                    }
                }
            }
        }
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) {
        for g in gates {
            self.apply(g);
        }
    }
}

/// Second-order Pauli-Z feature map for one layer of already-scaled
/// features `x`: Hadamards, `RZ(2 x_q)` on each qubit, then for every pair
/// `qi < qj` a `CNOT - RZ(2 (pi - x_qi)(pi - x_qj)) - CNOT` block.
pub fn feature_map_gates(x: &[f64]) -> Vec<Gate> {
    let n = x.len();
    let mut gates = Vec::with_capacity(2 * n + 3 * n * (n - 1) / 2);
    gates.extend((0..n).map(Gate::H));
    gates.extend((0..n).map(|q| Gate::Rz(q, 2.0 * x[q])));
    for i in 0..n {
        for j in (i + 1)..n {
            let xx = 2.0 * (PI - x[i]) * (PI - x[j]);
            gates.push(Gate::Cnot { control: i, target: j });
            gates.push(Gate::Rz(j, xx));
            gates.push(Gate::Cnot { control: i, target: j });
        }
    }
    gates
}

/// Trainable layer: `RZ, RY, RZ` on every qubit (applied in that order,
/// angles `theta[3q..3q + 3]`), then a CNOT ring `0->1, 1->2, ..., (n-1)->0`.
pub fn ansatz_gates(theta: &[f64]) -> Vec<Gate> {
    assert_eq!(theta.len() % 3, 0, "ansatz needs three angles per qubit");
    let n = theta.len() / 3;
    let mut gates = Vec::with_capacity(4 * n);
    for q in 0..n {
        gates.push(Gate::Rz(q, theta[3 * q]));
        gates.push(Gate::Ry(q, theta[3 * q + 1]));
        gates.push(Gate::Rz(q, theta[3 * q + 2]));
    }
    if n > 1 {
        for q in 0..n {
            gates.push(Gate::Cnot {
                control: q,
                target: (q + 1) % n,
            });
        }
    }
    gates
}

pub fn encode_layer(state: &mut QuantumState, x: &[f64]) {
    assert_eq!(x.len(), state.n_qubits(), "one feature per qubit");
    state.apply_all(&feature_map_gates(x));
}

pub fn ansatz_layer(state: &mut QuantumState, theta: &[f64]) {
    assert_eq!(theta.len(), 3 * state.n_qubits(), "three angles per qubit");
    state.apply_all(&ansatz_gates(theta));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingFn {
    Identity,
    Arctan,
}

impl ScalingFn {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            ScalingFn::Identity => u,
            ScalingFn::Arctan => u.atan(),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            ScalingFn::Identity => 1.0,
            ScalingFn::Arctan => 1.0 / (1.0 + u * u),
        }
    }

    /// Suffix used in solution names: `N` for identity, `A` for arctangent.
    pub fn suffix(self) -> char {
        match self {
            ScalingFn::Identity => 'N',
            ScalingFn::Arctan => 'A',
        }
    }
}

/// Layered data-reuploading circuit description. Serializes to the JSON
/// interchange form `{n_qubits, L, scaling_fn, theta, xi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcSpec {
    pub n_qubits: usize,
    #[serde(rename = "L")]
    pub n_layers: usize,
    pub scaling_fn: ScalingFn,
    /// Ansatz angles, `12 L` values.
    pub theta: Vec<f64>,
    /// Input scalings, `4 L` values.
    pub xi: Vec<f64>,
}

impl VqcSpec {
    /// Zero angles and unit input scalings.
    pub fn new(n_layers: usize, scaling_fn: ScalingFn) -> Result<Self> {
        if !(1..=3).contains(&n_layers) {
            return Err(Error::config(format!("layer count must be 1, 2 or 3 (got {n_layers})")));
        }
        Ok(Self {
            n_qubits: N_QUBITS,
            n_layers,
            scaling_fn,
            theta: vec![0.0; ANGLES_PER_LAYER * n_layers],
            xi: vec![1.0; N_QUBITS * n_layers],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits != N_QUBITS {
            return Err(Error::config("the critic circuit has exactly 4 qubits"));
        }
        if !(1..=3).contains(&self.n_layers) {
            return Err(Error::config("layer count must be 1, 2 or 3"));
        }
        if self.theta.len() != self.quantum_weight_count() || self.xi.len() != self.input_dim() {
            return Err(Error::config("theta/xi lengths do not match the layer count"));
        }
        Ok(())
    }

    /// Number of features consumed, `4 L`.
    pub fn input_dim(&self) -> usize {
        self.n_qubits * self.n_layers
    }

    /// Trainable ansatz angles, `12 L`.
    pub fn quantum_weight_count(&self) -> usize {
        3 * self.n_qubits * self.n_layers
    }

    pub fn theta_layer(&self, layer: usize) -> &[f64] {
        let k = 3 * self.n_qubits;
        &self.theta[layer * k..(layer + 1) * k]
    }

    /// Rotation angles `f(o * xi)` for all layers.
    pub fn scaled_features(&self, pre_features: &[f64]) -> Vec<f64> {
        pre_features
            .iter()
            .zip(&self.xi)
            .map(|(o, xi)| self.scaling_fn.apply(o * xi))
            .collect()
    }

    /// Output state for already-scaled angles `x` (length `4 L`) and the
    /// ansatz angles `theta`.
    pub fn state_with(&self, theta: &[f64], x: &[f64]) -> QuantumState {
        assert_eq!(x.len(), self.input_dim());
        assert_eq!(theta.len(), self.quantum_weight_count());
        let n = self.n_qubits;
        let mut state = QuantumState::zero(n);
        for l in 0..self.n_layers {
            encode_layer(&mut state, &x[l * n..(l + 1) * n]);
            ansatz_layer(&mut state, &theta[l * 3 * n..(l + 1) * 3 * n]);
        }
        state
    }

    /// Full gate list for scaled angles `x`, used by oracles and exports.
    pub fn gates_with(&self, theta: &[f64], x: &[f64]) -> Vec<Gate> {
        let n = self.n_qubits;
        let mut gates = Vec::new();
        for l in 0..self.n_layers {
            gates.extend(feature_map_gates(&x[l * n..(l + 1) * n]));
            gates.extend(ansatz_gates(&theta[l * 3 * n..(l + 1) * 3 * n]));
        }
        gates
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: VqcSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// `<Z_q>` for `q = 0..n` of a state.
pub fn z_expectations(state: &QuantumState) -> Vec<f64> {
    (0..state.n_qubits()).map(|q| state.expectation_z(q)).collect()
}

/// Circuit outputs for pre-processed features `o` (length `4 L`).
pub fn vqc_forward(spec: &VqcSpec, pre_features: &[f64]) -> Result<Vec<f64>> {
    if pre_features.len() != spec.input_dim() {
        return Err(Error::contract(format!(
            "circuit expects {} features, got {}",
            spec.input_dim(),
            pre_features.len()
        )));
    }
    let x = spec.scaled_features(pre_features);
    Ok(z_expectations(&spec.state_with(&spec.theta, &x)))
}

/// Gain sequence of SPSA: `c_k = c / (k+1)^gamma`, `a_k = a / (k+1+A)^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    pub a: f64,
    pub c: f64,
    pub big_a: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpsaConfig {
    /// Standard exponents with `a` chosen so that `a_0 = first_step`.
    pub fn with_first_step(first_step: f64) -> Self {
        let big_a: f64 = 50.0;
        let alpha = 0.602;
        Self {
            a: first_step * (1.0 + big_a).powf(alpha),
            c: 0.1,
            big_a,
            alpha,
            gamma: 0.101,
        }
    }
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self::with_first_step(1e-4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsaEstimate {
    pub grad: Vec<f64>,
    pub loss_center: f64,
    pub loss_plus: f64,
    pub loss_minus: f64,
    /// The Rademacher direction that was used.
    pub delta: Vec<f64>,
    pub ck: f64,
}

#[derive(Debug, Clone)]
pub struct Spsa {
    pub config: SpsaConfig,
    k: u64,
    evaluations: u64,
    rng: ChaCha8Rng,
}

impl Spsa {
    pub fn new(config: SpsaConfig, seed: u64) -> Self {
        Self {
            config,
            k: 0,
            evaluations: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.k
    }

    /// Number of loss evaluations issued so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn ck(&self) -> f64 {
        self.config.c / (self.k as f64 + 1.0).powf(self.config.gamma)
    }

    pub fn ak(&self) -> f64 {
        self.config.a / (self.k as f64 + 1.0 + self.config.big_a).powf(self.config.alpha)
    }

    /// Fresh `+-1` direction.
    pub fn rademacher(&mut self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| if self.rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }

    /// Records evaluations performed outside [`Spsa::estimate`] (e.g. by a
    /// caller that batches the three circuit runs itself).
    pub fn record_evaluations(&mut self, n: u64) {
        self.evaluations += n;
    }

    pub fn advance(&mut self) {
        self.k += 1;
    }

    /// Three-evaluation estimate at `theta`: the centre, `theta + c_k delta`
    /// and `theta - c_k delta`. Does not advance the iteration counter.
    pub fn estimate<F>(&mut self, theta: &[f64], mut loss: F) -> Result<SpsaEstimate>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let ck = self.ck();
        let delta = self.rademacher(theta.len());
        let shifted = |sign: f64| -> Vec<f64> { theta.iter().zip(&delta).map(|(t, d)| t + sign * ck * d).collect() };
        let loss_center = loss(theta);
        let loss_plus = loss(&shifted(1.0));
        let loss_minus = loss(&shifted(-1.0));
        self.evaluations += 3;
        if !(loss_center.is_finite() && loss_plus.is_finite() && loss_minus.is_finite()) {
            return Err(Error::Training("non-finite loss in SPSA estimate".into()));
        }
        let diff = (loss_plus - loss_minus) / (2.0 * ck);
        let grad = delta.iter().map(|d| diff / d).collect();
        Ok(SpsaEstimate {
            grad,
            loss_center,
            loss_plus,
            loss_minus,
            delta,
            ck,
        })
    }

    /// Estimate, then `theta <- theta - a_k g` and advance `k`.
    pub fn step<F>(&mut self, theta: &mut [f64], loss: F) -> Result<SpsaEstimate>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let est = self.estimate(theta, loss)?;
        let ak = self.ak();
        for (t, g) in theta.iter_mut().zip(&est.grad) {
            *t -= ak * g;
        }
        self.advance();
        Ok(est)
    }
}
