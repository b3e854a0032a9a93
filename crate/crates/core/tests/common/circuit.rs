//! Dense-matrix reference simulator and brute-force entanglement oracle.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use qmarl::qsim::{Gate, QuantumState, ScalingFn, VqcSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<C>>;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Textbook single-qubit matrices.
pub fn one_qubit(g: &Gate) -> Mat {
    let h = 1.0 / 2f64.sqrt();
    match *g {
        Gate::H(_) => vec![vec![c(h, 0.0), c(h, 0.0)], vec![c(h, 0.0), c(-h, 0.0)]],
        Gate::Rx(_, t) => {
            let (s, co) = (t / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
        }
        Gate::Ry(_, t) => {
            let (s, co) = (t / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]]
        }
        Gate::Rz(_, t) => vec![
            vec![C::from_polar(1.0, -t / 2.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), C::from_polar(1.0, t / 2.0)],
        ],
        _ => unreachable!(),
    }
}

/// Full `2^n` matrix of a gate. Qubit `q` is bit `q` of the basis index, so
/// the Kronecker product runs from the highest qubit down.
pub fn dense(g: &Gate, n: usize) -> Mat {
    let dim = 1 << n;
    match *g {
        Gate::Cnot { control, target } => {
            let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
            for i in 0..dim {
                let j = if i >> control & 1 == 1 { i ^ (1 << target) } else { i };
                m[j][i] = c(1.0, 0.0);
            }
            m
        }
        Gate::CPhase { a, b, angle } => {
            let mut m = identity(dim);
            for (i, row) in m.iter_mut().enumerate() {
                if i >> a & 1 == 1 && i >> b & 1 == 1 {
                    row[i] = C::from_polar(1.0, angle);
                }
            }
            m
        }
        _ => {
            let q = g.qubits()[0];
            let mut m = vec![vec![c(1.0, 0.0)]];
            for k in (0..n).rev() {
                let f = if k == q { one_qubit(g) } else { identity(2) };
                m = kron(&m, &f);
            }
            m
        }
    }
}

pub fn oracle_state(gates: &[Gate], n: usize) -> Vec<C> {
    let mut u = identity(1 << n);
    for g in gates {
        u = matmul(&dense(g, n), &u);
    }
    u.iter().map(|row| row[0]).collect()
}

pub fn max_diff(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn random_gate(rng: &mut ChaCha8Rng, n: usize) -> Gate {
    let q = rng.random_range(0..n);
    let mut other = rng.random_range(0..n - 1);
    if other >= q {
        other += 1;
    }
    let t = rng.random_range(-PI..PI);
    match rng.random_range(0..6) {
        0 => Gate::H(q),
        1 => Gate::Rx(q, t),
        2 => Gate::Ry(q, t),
        3 => Gate::Rz(q, t),
        4 => Gate::Cnot {
            control: q,
            target: other,
        },
        _ => Gate::CPhase {
            a: q,
            b: other,
            angle: t,
        },
    }
}

/// Independent re-statement of the circuit: `H`, `RZ(2x)` and the pairwise
/// `CNOT RZ(2(pi-xi)(pi-xj)) CNOT` blocks, then Euler rotations and the CNOT
/// ring, once per layer.
pub fn oracle_forward(spec: &VqcSpec, o: &[f64]) -> Vec<f64> {
    let mut gates = Vec::new();
    for l in 0..spec.n_layers {
        let x: Vec<f64> = (0..4)
            .map(|q| {
                let u = o[4 * l + q] * spec.xi[4 * l + q];
                match spec.scaling_fn {
                    ScalingFn::Identity => u,
                    ScalingFn::Arctan => u.atan(),
                }
            })
            .collect();
        for q in 0..4 {
            gates.push(Gate::H(q));
        }
        for q in 0..4 {
            gates.push(Gate::Rz(q, 2.0 * x[q]));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                gates.push(Gate::Cnot { control: i, target: j });
                gates.push(Gate::Rz(j, 2.0 * (PI - x[i]) * (PI - x[j])));
                gates.push(Gate::Cnot { control: i, target: j });
            }
        }
        let th = &spec.theta[12 * l..12 * (l + 1)];
        for q in 0..4 {
            gates.push(Gate::Rz(q, th[3 * q]));
            gates.push(Gate::Ry(q, th[3 * q + 1]));
            gates.push(Gate::Rz(q, th[3 * q + 2]));
        }
        for q in 0..4 {
            gates.push(Gate::Cnot {
                control: q,
                target: (q + 1) % 4,
            });
        }
    }
    let amps = oracle_state(&gates, 4);
    (0..4)
        .map(|q| {
            amps.iter()
                .enumerate()
                .map(|(i, a)| if i >> q & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum()
        })
        .collect()
}

pub fn ghz(n: usize) -> QuantumState {
    let mut s = QuantumState::zero(n);
    s.apply(&Gate::H(0));
    for q in 1..n {
        s.apply(&Gate::Cnot { control: 0, target: q });
    }
    s
}

/// `Q` from explicit reduced density matrices, built by summing
/// `|psi><psi|` over the traced-out indices.
pub fn brute_force_q(state: &QuantumState) -> f64 {
    let n = state.n_qubits();
    let amps = state.amplitudes();
    let mut purity = 0.0;
    for k in 0..n {
        let mut rho = [[c(0.0, 0.0); 2]; 2];
        for i in 0..amps.len() {
            for j in 0..amps.len() {
                if (i & !(1 << k)) == (j & !(1 << k)) {
                    rho[i >> k & 1][j >> k & 1] += amps[i] * amps[j].conj();
                }
            }
        }
        let mut tr = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                tr += (rho[a][b] * rho[b][a]).re;
            }
        }
        purity += tr;
    }
    2.0 * (1.0 - purity / n as f64)
}

pub fn random_state(rng: &mut ChaCha8Rng, n_gates: usize) -> QuantumState {
    let mut s = QuantumState::zero(4);
    for _ in 0..n_gates {
        s.apply(&random_gate(rng, 4));
    }
    s
}

/// Largest amplitude error over random gate sequences of the given length.
pub fn gate_sequence_error(seed: u64, cases: usize, len: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let gates: Vec<Gate> = (0..len).map(|_| random_gate(&mut rng, 4)).collect();
        let mut s = QuantumState::zero(4);
        s.apply_all(&gates);
        worst = worst.max(max_diff(s.amplitudes(), &oracle_state(&gates, 4)));
    }
    worst
}

/// Largest `<Z>` error of `vqc_forward` against the dense oracle, over
/// `cases` random parameter sets for each depth 1..=3.
pub fn vqc_forward_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for layers in 1..=3 {
        for case in 0..cases {
            let f = if case % 2 == 0 {
                ScalingFn::Identity
            } else {
                ScalingFn::Arctan
            };
            let mut spec = VqcSpec::new(layers, f).unwrap();
            for t in &mut spec.theta {
                *t = rng.random_range(-PI..PI);
            }
            for x in &mut spec.xi {
                *x = rng.random_range(-2.0..2.0);
            }
            let o: Vec<f64> = (0..4 * layers).map(|_| rng.random_range(-1.5..1.5)).collect();
            let z = qmarl::qsim::vqc_forward(&spec, &o).unwrap();
            for (a, b) in z.iter().zip(&oracle_forward(&spec, &o)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Largest deviation of `Q` from its known value on product, Bell and GHZ-4
/// states.
pub fn meyer_wallach_analytic_error() -> f64 {
    let q = |s: &QuantumState| qmarl::qmetrics::meyer_wallach(s).unwrap();
    let mut product = QuantumState::zero(4);
    product.apply(&Gate::Rx(1, PI));
    product.apply(&Gate::Ry(2, 0.7));
    [q(&product), (q(&ghz(2)) - 1.0), (q(&ghz(4)) - 1.0)]
        .iter()
        .fold(0.0, |m, e| m.max(e.abs()))
}

/// Largest gap between `Q` and the explicit partial-trace purity formula.
pub fn meyer_wallach_brute_force_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let s = random_state(&mut rng, 30);
            (qmarl::qmetrics::meyer_wallach(&s).unwrap() - brute_force_q(&s)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest change of `Q` under random single-qubit rotations.
pub fn meyer_wallach_local_invariance_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let s = random_state(&mut rng, 30);
        let before = qmarl::qmetrics::meyer_wallach(&s).unwrap();
        let mut t = s.clone();
        for q in 0..4 {
            t.apply(&Gate::Rz(q, rng.random_range(-PI..PI)));
            t.apply(&Gate::Ry(q, rng.random_range(-PI..PI)));
            t.apply(&Gate::Rx(q, rng.random_range(-PI..PI)));
        }
        worst = worst.max((qmarl::qmetrics::meyer_wallach(&t).unwrap() - before).abs());
    }
    worst
}
