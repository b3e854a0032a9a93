//! Entanglement capability (mean Meyer-Wallach measure) and expressibility
//! (KL divergence of the pairwise fidelity distribution from the Haar one)
//! of a critic circuit.
//!
//! Parameter vectors are sampled with every free angle uniform on
//! `[-pi, pi]`: the ansatz angles directly, and the pre-scaling inputs
//! `o * xi` before the circuit's scaling function is applied. Estimates are
//! split into [`N_BATCHES`] batches with seeds derived from the caller's seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{QuantumState, VqcSpec};

pub const N_BATCHES: usize = 10;
pub const DEFAULT_BINS: usize = 75;
const EMPTY_BIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Meyer-Wallach global entanglement `Q = 2 (1 - mean_k Tr rho_k^2)`.
pub fn meyer_wallach(state: &QuantumState) -> Result<f64> {
    if (state.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::contract("Meyer-Wallach needs a normalized state"));
    }
    let n = state.n_qubits();
    let amps = state.amplitudes();
    let mut purity_sum = 0.0;
    for k in 0..n {
        let bit = 1 << k;
        let mut p0 = 0.0;
        let mut p1 = 0.0;
        let mut coh = num_complex::Complex64::new(0.0, 0.0);
        for i in (0..amps.len()).filter(|i| i & bit == 0) {
            let a0 = amps[i];
            let a1 = amps[i | bit];
            p0 += a0.norm_sqr();
            p1 += a1.norm_sqr();
            coh += a0 * a1.conj();
        }
        purity_sum += p0 * p0 + p1 * p1 + 2.0 * coh.norm_sqr();
    }
    Ok((2.0 * (1.0 - purity_sum / n as f64)).clamp(0.0, 1.0))
}

/// Draws one output state with uniformly sampled angles.
pub fn sample_state<R: Rng + ?Sized>(spec: &VqcSpec, rng: &mut R) -> QuantumState {
    let theta: Vec<f64> = (0..spec.quantum_weight_count())
        .map(|_| rng.random_range(-PI..PI))
        .collect();
    let x: Vec<f64> = (0..spec.input_dim())
        .map(|_| spec.scaling_fn.apply(rng.random_range(-PI..PI)))
        .collect();
    spec.state_with(&theta, &x)
}

fn batch_sizes(total: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..N_BATCHES).map(move |b| {
        let size = total / N_BATCHES + usize::from(b < total % N_BATCHES);
        (b, size)
    })
}

fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64 + 1);
    rng
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean Meyer-Wallach measure over `n_samples` sampled outputs; `std` is the
/// spread of the batch means.
pub fn entanglement_capability(spec: &VqcSpec, n_samples: usize, seed: u64) -> Result<MetricEstimate> {
    spec.validate()?;
    if n_samples < 100 {
        return Err(Error::contract("entanglement capability needs >= 100 samples"));
    }
    let mut total = 0.0;
    let mut batch_means = Vec::with_capacity(N_BATCHES);
    for (b, size) in batch_sizes(n_samples) {
        let mut rng = batch_rng(seed, b);
        let mut acc = 0.0;
        for _ in 0..size {
            acc += meyer_wallach(&sample_state(spec, &mut rng))?;
        }
        total += acc;
        batch_means.push(acc / size as f64);
    }
    let (_, std) = mean_std(&batch_means);
    Ok(MetricEstimate {
        mean: total / n_samples as f64,
        std,
        n_samples,
        seed,
    })
}

/// Equal-width histogram of fidelities over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl FidelityHistogram {
    pub fn new(n_bins: usize) -> Self {
        Self {
            edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
            counts: vec![0; n_bins],
            total: 0,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, fidelity: f64) {
        let n = self.n_bins();
        let idx = ((fidelity.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
        self.counts[idx] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &FidelityHistogram) {
        assert_eq!(self.n_bins(), other.n_bins());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// Haar fidelity density `(N-1)(1-F)^(N-2)` for Hilbert dimension `dim`.
pub fn haar_density(fidelity: f64, dim: usize) -> f64 {
    (dim as f64 - 1.0) * (1.0 - fidelity).powi(dim as i32 - 2)
}

/// Haar probability mass of each bin, integrated through the CDF
/// `1 - (1-F)^(N-1)`.
pub fn haar_bin_probabilities(edges: &[f64], dim: usize) -> Vec<f64> {
    let tail = |f: f64| (1.0 - f).powi(dim as i32 - 1);
    edges.windows(2).map(|w| tail(w[0]) - tail(w[1])).collect()
}

/// `D_KL(p || q)` with empty `p` bins floored at a tiny epsilon and
/// renormalized.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let floored: Vec<f64> = p.iter().map(|&v| if v > 0.0 { v } else { EMPTY_BIN_EPS }).collect();
    let norm: f64 = floored.iter().sum();
    floored
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi / norm;
            pi * (pi / qi).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn expressibility_of(hist: &FidelityHistogram, dim: usize) -> f64 {
    kl_divergence(&hist.probabilities(), &haar_bin_probabilities(&hist.edges, dim))
}

/// KL divergence of the sampled pairwise fidelity histogram from the Haar
/// distribution. `mean` is computed from the pooled histogram; `std` is the
/// spread of the per-batch divergences.
pub fn expressibility(spec: &VqcSpec, n_pairs: usize, n_bins: usize, seed: u64) -> Result<MetricEstimate> {
    spec.validate()?;
    if n_pairs < 1000 {
        return Err(Error::contract("expressibility needs >= 1000 fidelity pairs"));
    }
    if n_bins < 10 {
        return Err(Error::contract("expressibility needs >= 10 bins"));
    }
    let dim = 1usize << spec.n_qubits;
    let mut pooled = FidelityHistogram::new(n_bins);
    let mut batch_kl = Vec::with_capacity(N_BATCHES);
    for (b, size) in batch_sizes(n_pairs) {
        let mut rng = batch_rng(seed ^ 0x9e37_79b9_7f4a_7c15, b);
        let mut hist = FidelityHistogram::new(n_bins);
        for _ in 0..size {
            let a = sample_state(spec, &mut rng);
            let b = sample_state(spec, &mut rng);
            hist.add(a.fidelity(&b));
        }
        batch_kl.push(expressibility_of(&hist, dim));
        pooled.merge(&hist);
    }
    let (_, std) = mean_std(&batch_kl);
    Ok(MetricEstimate {
        mean: expressibility_of(&pooled, dim),
        std,
        n_samples: n_pairs,
        seed,
    })
}
