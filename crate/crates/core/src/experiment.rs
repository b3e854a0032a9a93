//! Experiment plumbing: the solution registry and weight-parity audit,
//! random-baseline calibration of the communication range, seeded training
//! campaigns with crash-safe curve files, derived metrics and exports.

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{random_episode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::mappo::{CriticArch, CurvePoint, Trainer, TrainerConfig};
use crate::qmetrics::{entanglement_capability, expressibility, DEFAULT_BINS};
use crate::qsim::{ScalingFn, VqcSpec};

/// Mean cumulative reward of uniform-random agents on the bundled scenarios.
pub const RANDOM_CR_4A1S: f64 = 60.20;
pub const RANDOM_CR_5A2S: f64 = 84.88;

/// Convergence-speed threshold relative to the random baseline.
pub const CS_FACTOR: f64 = 1.25;

/// Evaluation points after this many steps count towards the converged
/// reward.
pub const CCR_AFTER_STEPS: u64 = 1_000_000;

/// Largest relative gap in total trainable weights tolerated between a
/// classical critic and its quantum counterpart.
pub const PARITY_TOLERANCE: f64 = 0.05;

pub const CURVE_HEADER: &str = "env_steps,cr_mean,cr_std,actor_loss,critic_loss";

pub fn reference_random_cr(scenario_name: &str) -> Option<f64> {
    match scenario_name.to_ascii_lowercase().as_str() {
        "4a1s" => Some(RANDOM_CR_4A1S),
        "5a2s" => Some(RANDOM_CR_5A2S),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SolutionId {
    /// `NN-X`: classical critic of hidden width `X`.
    Classical(usize),
    /// `VQC-LN` (identity scaling) or `VQC-LA` (arctangent scaling).
    Quantum { layers: usize, scaling_fn: ScalingFn },
}

impl SolutionId {
    /// Every critic compared in the experiments.
    pub fn registry() -> Vec<SolutionId> {
        let mut v: Vec<SolutionId> = [4, 7, 8, 10, 11].into_iter().map(SolutionId::Classical).collect();
        for layers in 1..=3 {
            for scaling_fn in [ScalingFn::Identity, ScalingFn::Arctan] {
                v.push(SolutionId::Quantum { layers, scaling_fn });
            }
        }
        v
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self, SolutionId::Quantum { .. })
    }

    /// Critic architecture for a scenario. Quantum critics get the
    /// post-block width that brings their total weights closest to the
    /// paired classical critic.
    pub fn resolve(&self, scenario: &ScenarioConfig) -> Result<CriticArch> {
        match *self {
            SolutionId::Classical(width) => Ok(CriticArch::Classical { width }),
            SolutionId::Quantum { layers, scaling_fn } => {
                let o = scenario.global_obs_dim();
                let target = CriticArch::Classical {
                    width: paired_width(layers, scenario.n_aircraft)?,
                }
                .weight_counts(o)
                .total();
                Ok(CriticArch::Quantum {
                    layers,
                    scaling_fn,
                    post_hidden: post_hidden_for(layers, scaling_fn, o, target),
                })
            }
        }
    }
}

impl fmt::Display for SolutionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolutionId::Classical(w) => write!(f, "NN-{w}"),
            SolutionId::Quantum { layers, scaling_fn } => write!(f, "VQC-{layers}{}", scaling_fn.suffix()),
        }
    }
}

impl FromStr for SolutionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let bad = || Error::config(format!("unknown solution '{s}' (expected NN-X or VQC-LN / VQC-LA)"));
        if let Some(w) = upper.strip_prefix("NN-") {
            let width: usize = w.parse().map_err(|_| bad())?;
            if width == 0 {
                return Err(bad());
            }
            return Ok(SolutionId::Classical(width));
        }
        let rest = upper.strip_prefix("VQC-").ok_or_else(bad)?;
        let mut chars = rest.chars();
        let layers = chars.next().and_then(|c| c.to_digit(10)).ok_or_else(bad)? as usize;
        let scaling_fn = match (chars.next(), chars.next()) {
            (Some('N'), None) => ScalingFn::Identity,
            (Some('A'), None) => ScalingFn::Arctan,
            _ => return Err(bad()),
        };
        if !(1..=3).contains(&layers) {
            return Err(bad());
        }
        Ok(SolutionId::Quantum { layers, scaling_fn })
    }
}

impl TryFrom<String> for SolutionId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SolutionId> for String {
    fn from(id: SolutionId) -> String {
        id.to_string()
    }
}

/// Classical width compared against an `L`-layer circuit.
pub fn paired_width(layers: usize, n_aircraft: usize) -> Result<usize> {
    let widths = match n_aircraft {
        4 => [4, 7, 10],
        5 => [4, 8, 11],
        _ => {
            return Err(Error::config(format!(
                "no classical pairing defined for {n_aircraft} aircraft"
            )))
        }
    };
    widths
        .get(layers.wrapping_sub(1))
        .copied()
        .ok_or_else(|| Error::config(format!("no pairing for {layers} circuit layers")))
}

/// Post-block hidden width `H` in `0..=64` minimising the total-weight gap to
/// `target_total`; ties go to the smaller width.
pub fn post_hidden_for(layers: usize, scaling_fn: ScalingFn, global_obs_dim: usize, target_total: usize) -> usize {
    (0..=64)
        .min_by_key(|&post_hidden| {
            let arch = CriticArch::Quantum {
                layers,
                scaling_fn,
                post_hidden,
            };
            arch.weight_counts(global_obs_dim).total().abs_diff(target_total)
        })
        .expect("non-empty range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub classical: SolutionId,
    pub quantum: SolutionId,
    pub classical_total: usize,
    pub quantum_classical: usize,
    pub quantum_weights: usize,
    pub quantum_total: usize,
    /// `|difference| / smaller total`.
    pub relative_gap: f64,
}

impl ParityRow {
    pub fn within_tolerance(&self) -> bool {
        self.relative_gap <= PARITY_TOLERANCE
    }
}

/// Weight bookkeeping of every (classical, quantum) pair in a scenario.
pub fn parity_audit(scenario: &ScenarioConfig) -> Result<Vec<ParityRow>> {
    let o = scenario.global_obs_dim();
    let mut rows = Vec::new();
    for layers in 1..=3 {
        let classical = SolutionId::Classical(paired_width(layers, scenario.n_aircraft)?);
        let ct = classical.resolve(scenario)?.weight_counts(o).total();
        for scaling_fn in [ScalingFn::Identity, ScalingFn::Arctan] {
            let quantum = SolutionId::Quantum { layers, scaling_fn };
            let qc = quantum.resolve(scenario)?.weight_counts(o);
            let gap = ct.abs_diff(qc.total()) as f64 / ct.min(qc.total()) as f64;
            rows.push(ParityRow {
                classical,
                quantum,
                classical_total: ct,
                quantum_classical: qc.classical,
                quantum_weights: qc.quantum,
                quantum_total: qc.total(),
                relative_gap: gap,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub min_range: f64,
    pub max_range: f64,
    pub coarse_step: f64,
    /// Episodes per coarse candidate (at least 300).
    pub coarse_episodes: usize,
    pub fine_step: f64,
    /// Half-width of the fine grid around the best coarse candidate.
    pub fine_half_width: f64,
    pub fine_episodes: usize,
    /// First episode seed; every candidate replays the same seeds.
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            min_range: 0.1,
            max_range: 1.0,
            coarse_step: 0.025,
            coarse_episodes: 300,
            fine_step: 0.0025,
            fine_half_width: 0.025,
            fine_episodes: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: ScenarioConfig,
    pub measured_cr: f64,
    /// `(comm_range, mean random CR)` of every candidate, coarse then fine.
    pub sweep: Vec<(f64, f64)>,
}

/// Mean cumulative reward of uniform-random agents over `episodes`
/// episodes seeded `seed, seed + 1, ...`.
pub fn random_baseline(cfg: &ScenarioConfig, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::contract("random baseline needs at least one episode"));
    }
    let mut total = 0.0;
    for k in 0..episodes as u64 {
        total += random_episode(cfg, seed + k)?;
    }
    Ok(total / episodes as f64)
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6).collect()
}

/// Grid search over the communication range for the value whose random-agent
/// cumulative reward is nearest `target`: a coarse sweep over the full range,
/// then a finer sweep with more episodes around the best coarse candidate.
pub fn calibrate(base: &ScenarioConfig, target: f64, tolerance: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    if !(target > 0.0 && tolerance >= 0.0) {
        return Err(Error::contract("calibration target must be positive"));
    }
    if opts.coarse_episodes < 300 || opts.fine_episodes < 300 {
        return Err(Error::contract("calibration needs >= 300 episodes per candidate"));
    }
    if !(opts.min_range > 0.0 && opts.max_range > opts.min_range && opts.coarse_step > 0.0 && opts.fine_step > 0.0) {
        return Err(Error::config("invalid calibration grid"));
    }
    let measure = |r: f64, episodes: usize| -> Result<(f64, f64)> {
        let cfg = ScenarioConfig {
            comm_range: r,
            ..base.clone()
        };
        Ok((r, random_baseline(&cfg, episodes, opts.seed)?))
    };
    let nearest = |rows: &[(f64, f64)]| -> (f64, f64) {
        *rows
            .iter()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .expect("grid is non-empty")
    };
    let mut sweep = Vec::new();
    for r in grid(opts.min_range, opts.max_range, opts.coarse_step) {
        sweep.push(measure(r, opts.coarse_episodes)?);
    }
    let (centre, _) = nearest(&sweep);
    let lo = (centre - opts.fine_half_width).max(opts.min_range);
    let hi = (centre + opts.fine_half_width).min(opts.max_range);
    let mut fine = Vec::new();
    for r in grid(lo, hi, opts.fine_step) {
        fine.push(measure(r, opts.fine_episodes)?);
    }
    let (best_r, best_cr) = nearest(&fine);
    sweep.extend(fine);
    if (best_cr - target).abs() > tolerance {
        return Err(Error::Calibration {
            message: format!(
                "no comm_range within {tolerance} of target {target}; nearest {best_r} gives {best_cr:.2}"
            ),
            sweep,
        });
    }
    Ok(Calibration {
        config: ScenarioConfig {
            comm_range: best_r,
            ..base.clone()
        },
        measured_cr: best_cr,
        sweep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub solution: SolutionId,
    pub scenario: String,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
}

/// Appends curve points to a CSV file as they are produced, flushing after
/// every row so an aborted run keeps its partial curve.
pub struct CurveWriter {
    writer: csv::Writer<File>,
}

impl CurveWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        if let Some(dir) = path.as_ref().parent() {
            fs::create_dir_all(dir)?;
        }
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .has_headers(true)
            .from_path(path)?;
        let mut w = Self { writer };
        w.writer.write_record(CURVE_HEADER.split(','))?;
        w.writer.flush()?;
        Ok(w)
    }

    pub fn append(&mut self, p: &CurvePoint) -> Result<()> {
        self.writer.write_record(&[
            p.env_steps.to_string(),
            p.cr_mean.to_string(),
            p.cr_std.to_string(),
            p.actor_loss.to_string(),
            p.critic_loss.to_string(),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_curve(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let mut w = CurveWriter::create(path)?;
    for p in curve {
        w.append(p)?;
    }
    Ok(())
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CURVE_HEADER {
        return Err(Error::config(format!(
            "{} does not have the curve header '{CURVE_HEADER}'",
            path.as_ref().display()
        )));
    }
    let mut curve = Vec::new();
    for row in reader.deserialize() {
        curve.push(row?);
    }
    Ok(curve)
}

/// Location of every artefact of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub seed: u64,
}

impl RunPaths {
    pub fn new(out_dir: &Path, scenario: &str, solution: SolutionId, seed: u64) -> Self {
        Self {
            dir: out_dir.join(scenario).join(solution.to_string()),
            seed,
        }
    }

    pub fn curve(&self) -> PathBuf {
        self.dir.join(format!("seed-{}.csv", self.seed))
    }

    pub fn actor(&self) -> PathBuf {
        self.dir.join(format!("actor-seed-{}.json", self.seed))
    }

    pub fn critic(&self) -> PathBuf {
        self.dir.join(format!("critic-seed-{}.json", self.seed))
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub solution: SolutionId,
    pub scenario_name: String,
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
}

impl Campaign {
    pub fn new(solution: SolutionId, scenario_name: &str, scenario: ScenarioConfig) -> Self {
        Self {
            solution,
            scenario_name: scenario_name.to_owned(),
            scenario,
            trainer: TrainerConfig::default(),
        }
    }

    /// One seeded run; curve points are appended to disk as they arrive and
    /// final checkpoints are written next to the curve.
    pub fn run_seed(&self, seed: u64, total_steps: u64, out_dir: &Path) -> Result<RunRecord> {
        let arch = self.solution.resolve(&self.scenario)?;
        let paths = RunPaths::new(out_dir, &self.scenario_name, self.solution, seed);
        let mut writer = CurveWriter::create(paths.curve())?;
        let mut trainer = Trainer::new(self.trainer, self.scenario.clone(), arch, seed)?;
        let curve = trainer.train(total_steps, |p| writer.append(p))?;
        trainer.actor.to_checkpoint().save(paths.actor())?;
        trainer.critic.to_checkpoint().save(paths.critic())?;
        Ok(RunRecord {
            solution: self.solution,
            scenario: self.scenario_name.clone(),
            seed,
            curve,
        })
    }
}

/// Trains one run per seed, each on its own thread. Fails with the first
/// error after all runs have stopped; partial curves stay on disk.
pub fn run_training(campaign: &Campaign, seeds: &[u64], total_steps: u64, out_dir: &Path) -> Result<Vec<RunRecord>> {
    if seeds.is_empty() {
        return Err(Error::contract("at least one seed is required"));
    }
    let results: Vec<Result<RunRecord>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| s.spawn(move || campaign.run_seed(seed, total_steps, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Training("training thread panicked".into())))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Reads the curve files of every seed of a solution.
pub fn load_records(out_dir: &Path, scenario: &str, solution: SolutionId) -> Result<Vec<RunRecord>> {
    let dir = out_dir.join(scenario).join(solution.to_string());
    let mut records = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(seed) = name
            .strip_prefix("seed-")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<u64>().ok())
        else {
            continue;
        };
        records.push(RunRecord {
            solution,
            scenario: scenario.to_owned(),
            seed,
            curve: read_curve(&path)?,
        });
    }
    records.sort_by_key(|r| r.seed);
    Ok(records)
}

/// Seed-averaged curve with the spread across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub env_steps: Vec<u64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across seeds (zero for a single seed).
    pub std: Vec<f64>,
    pub n_seeds: usize,
}

impl AggregateCurve {
    /// Standard error `std / sqrt(n_seeds)`.
    pub fn standard_error(&self) -> Vec<f64> {
        let k = (self.n_seeds as f64).sqrt();
        self.std.iter().map(|s| s / k).collect()
    }
}

/// Averages curves across seeds over their common prefix.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateCurve> {
    let len = records.iter().map(|r| r.curve.len()).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::contract("cannot aggregate empty curves"));
    }
    let n = records.len() as f64;
    let mut agg = AggregateCurve {
        env_steps: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
        n_seeds: records.len(),
    };
    for i in 0..len {
        let steps = records[0].curve[i].env_steps;
        if records.iter().any(|r| r.curve[i].env_steps != steps) {
            return Err(Error::contract("curves are not sampled at the same steps"));
        }
        let vals: Vec<f64> = records.iter().map(|r| r.curve[i].cr_mean).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let std = if records.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        agg.env_steps.push(steps);
        agg.mean.push(mean);
        agg.std.push(std);
    }
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    /// Maximum of the aggregated curve.
    pub mcr: f64,
    /// Mean of the aggregated curve after [`CCR_AFTER_STEPS`]; `None` when the
    /// run is shorter.
    pub ccr: Option<f64>,
    /// First evaluation step, in thousands, at which the aggregated curve
    /// reaches the threshold; `None` when never reached.
    pub cs_thousands: Option<f64>,
    pub threshold: f64,
}

pub fn cs_threshold(cr_rand: f64) -> f64 {
    CS_FACTOR * cr_rand
}

/// MCR, CCR and CS of the seed-averaged, unsmoothed curve.
pub fn derive_metrics(records: &[RunRecord], cr_rand: f64) -> Result<DerivedMetrics> {
    let agg = aggregate(records)?;
    let threshold = cs_threshold(cr_rand);
    let mcr = agg.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let late: Vec<f64> = agg
        .env_steps
        .iter()
        .zip(&agg.mean)
        .filter(|(s, _)| **s > CCR_AFTER_STEPS)
        .map(|(_, m)| *m)
        .collect();
    let ccr = (!late.is_empty()).then(|| late.iter().sum::<f64>() / late.len() as f64);
    let cs_thousands = agg
        .env_steps
        .iter()
        .zip(&agg.mean)
        .find(|(_, m)| **m >= threshold)
        .map(|(s, _)| *s as f64 / 1000.0);
    Ok(DerivedMetrics {
        mcr,
        ccr,
        cs_thousands,
        threshold,
    })
}

/// Exponential moving average `s_t = a s_{t-1} + (1 - a) x_t`, `s_0 = x_0`.
pub fn ema(series: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut s = None;
    for &x in series {
        let next = match s {
            None => x,
            Some(prev) => factor * prev + (1.0 - factor) * x,
        };
        out.push(next);
        s = Some(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(Error::config(format!("unknown export format '{s}'"))),
        }
    }
}

/// One row of an exported curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportPoint {
    pub env_steps: u64,
    pub cr_mean: f64,
    pub cr_se: f64,
    pub cr_lower: f64,
    pub cr_upper: f64,
    pub cr_ema: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedCurve {
    pub solution: SolutionId,
    pub scenario: String,
    pub n_seeds: usize,
    pub ema_factor: f64,
    pub points: Vec<ExportPoint>,
}

pub fn exported_curve(records: &[RunRecord], ema_factor: f64) -> Result<ExportedCurve> {
    if !(0.0..1.0).contains(&ema_factor) {
        return Err(Error::config("EMA factor must lie in [0, 1)"));
    }
    let first = records.first().ok_or_else(|| Error::contract("no records to export"))?;
    let agg = aggregate(records)?;
    let se = agg.standard_error();
    let smooth = ema(&agg.mean, ema_factor);
    let points = (0..agg.mean.len())
        .map(|i| ExportPoint {
            env_steps: agg.env_steps[i],
            cr_mean: agg.mean[i],
            cr_se: se[i],
            cr_lower: agg.mean[i] - se[i],
            cr_upper: agg.mean[i] + se[i],
            cr_ema: smooth[i],
        })
        .collect();
    Ok(ExportedCurve {
        solution: first.solution,
        scenario: first.scenario.clone(),
        n_seeds: agg.n_seeds,
        ema_factor,
        points,
    })
}

/// Writes `<out_dir>/<scenario>-<solution>.<csv|json>` and returns its path.
pub fn export(records: &[RunRecord], format: ExportFormat, ema_factor: f64, out_dir: &Path) -> Result<PathBuf> {
    let curve = exported_curve(records, ema_factor)?;
    fs::create_dir_all(out_dir)?;
    let stem = format!("{}-{}", curve.scenario, curve.solution);
    match format {
        ExportFormat::Csv => {
            let path = out_dir.join(format!("{stem}.csv"));
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_path(&path)?;
            for p in &curve.points {
                w.serialize(p)?;
            }
            w.flush()?;
            Ok(path)
        }
        ExportFormat::Json => {
            let path = out_dir.join(format!("{stem}.json"));
            fs::write(&path, serde_json::to_string_pretty(&curve)?)?;
            Ok(path)
        }
    }
}

pub const QMETRICS_HEADER: [&str; 9] = [
    "circuit_id",
    "L",
    "scaling_fn",
    "ent_mean",
    "ent_std",
    "expr_mean",
    "expr_std",
    "n_samples",
    "seed",
];

pub const NOT_APPLICABLE: &str = "n/a";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QMetricsRow {
    Circuit {
        circuit_id: SolutionId,
        layers: usize,
        scaling_fn: ScalingFn,
        ent_mean: f64,
        ent_std: f64,
        expr_mean: f64,
        expr_std: f64,
        n_samples: usize,
        seed: u64,
    },
    NotApplicable {
        circuit_id: SolutionId,
    },
}

impl QMetricsRow {
    pub fn to_record(&self) -> Vec<String> {
        match self {
            QMetricsRow::Circuit {
                circuit_id,
                layers,
                scaling_fn,
                ent_mean,
                ent_std,
                expr_mean,
                expr_std,
                n_samples,
                seed,
            } => vec![
                circuit_id.to_string(),
                layers.to_string(),
                scaling_name(*scaling_fn).to_owned(),
                ent_mean.to_string(),
                ent_std.to_string(),
                expr_mean.to_string(),
                expr_std.to_string(),
                n_samples.to_string(),
                seed.to_string(),
            ],
            QMetricsRow::NotApplicable { circuit_id } => {
                let mut v = vec![circuit_id.to_string()];
                v.extend(std::iter::repeat_n(
                    NOT_APPLICABLE.to_owned(),
                    QMETRICS_HEADER.len() - 1,
                ));
                v
            }
        }
    }
}

fn scaling_name(f: ScalingFn) -> &'static str {
    match f {
        ScalingFn::Identity => "identity",
        ScalingFn::Arctan => "arctan",
    }
}

/// Entanglement capability and expressibility of every quantum solution;
/// classical solutions get a not-applicable row. The estimates depend on the
/// circuit alone, not on any scenario.
pub fn qmetrics_report(solutions: &[SolutionId], n_samples: usize, seed: u64) -> Result<Vec<QMetricsRow>> {
    solutions
        .iter()
        .map(|&id| match id {
            SolutionId::Classical(_) => Ok(QMetricsRow::NotApplicable { circuit_id: id }),
            SolutionId::Quantum { layers, scaling_fn } => {
                let spec = VqcSpec::new(layers, scaling_fn)?;
                let ent = entanglement_capability(&spec, n_samples, seed)?;
                let expr = expressibility(&spec, n_samples, DEFAULT_BINS, seed)?;
                Ok(QMetricsRow::Circuit {
                    circuit_id: id,
                    layers,
                    scaling_fn,
                    ent_mean: ent.mean,
                    ent_std: ent.std,
                    expr_mean: expr.mean,
                    expr_std: expr.std,
                    n_samples,
                    seed,
                })
            }
        })
        .collect()
}

pub fn write_qmetrics_csv(path: impl AsRef<Path>, rows: &[QMetricsRow]) -> Result<()> {
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(QMETRICS_HEADER)?;
    for r in rows {
        w.write_record(r.to_record())?;
    }
    w.flush()?;
    Ok(())
}
