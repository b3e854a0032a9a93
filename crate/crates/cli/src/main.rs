use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qmarl::env::ScenarioConfig;
use qmarl::experiment::{
    calibrate, derive_metrics, export, load_records, parity_audit, qmetrics_report, random_baseline,
    reference_random_cr, run_training, write_qmetrics_csv, CalibrationOptions, Campaign, ExportFormat, RunPaths,
    SolutionId,
};
use qmarl::mappo::evaluate;
use qmarl::nn::{GaussianPolicy, NetCheckpoint};

#[derive(Parser)]
#[command(
    name = "qmarl",
    version,
    about = "Multi-agent FANET connectivity training with classical or circuit critics"
)]
struct Cli {
    /// Root directory for scenarios, curves, checkpoints and reports.
    #[arg(long, global = true, env = "QMARL_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArg {
    /// Bundled scenario name (4a1s, 5a2s) or path to a scenario TOML.
    #[arg(long, default_value = "4a1s")]
    scenario: String,
}

impl ScenarioArg {
    fn load(&self) -> Result<ScenarioConfig> {
        ScenarioConfig::resolve(&self.scenario).with_context(|| format!("loading scenario {}", self.scenario))
    }

    /// Directory-friendly name: the bundled name or the file stem.
    fn name(&self) -> String {
        match ScenarioConfig::builtin(&self.scenario) {
            Some(_) => self.scenario.to_ascii_lowercase(),
            None => Path::new(&self.scenario)
                .file_stem()
                .map_or_else(|| self.scenario.clone(), |s| s.to_string_lossy().into_owned()),
        }
    }

    fn cr_rand(&self, given: Option<f64>) -> Result<f64> {
        given
            .or_else(|| reference_random_cr(&self.name()))
            .with_context(|| format!("no reference random CR for '{}'; pass --cr-rand", self.scenario))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the communication range so random agents hit a target reward.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Target mean cumulative reward (defaults to the scenario's reference).
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        tolerance: f64,
        /// Episodes per candidate on the fine grid.
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one solution on a scenario for each seed.
    Train {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        solution: SolutionId,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 200_000)]
        steps: u64,
    },
    /// Evaluate trained actors (deterministic) or uniform-random agents.
    Eval {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Solution whose saved actors to load; omit for random agents.
        #[arg(long)]
        solution: Option<SolutionId>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Episodes per evaluation.
        #[arg(long, default_value_t = 300)]
        samples: usize,
    },
    /// MCR, CCR and CS of the seed-averaged curves.
    Metrics {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_delimiter = ',', required = true)]
        solution: Vec<SolutionId>,
        /// Random-agent baseline; defaults to the scenario's reference.
        #[arg(long)]
        cr_rand: Option<f64>,
    },
    /// Entanglement capability and expressibility of circuit critics.
    Qmetrics {
        #[arg(long, value_delimiter = ',')]
        solution: Vec<SolutionId>,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Seed-aggregated curves with standard-error bands and EMA smoothing.
    Export {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_delimiter = ',', required = true)]
        solution: Vec<SolutionId>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        /// EMA factor in [0, 1); 0 leaves the series unsmoothed.
        #[arg(long, default_value_t = 0.0)]
        ema: f64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = cli.out_dir;
    match cli.command {
        Command::Calibrate {
            scenario,
            target,
            tolerance,
            samples,
            seed,
        } => {
            let base = scenario.load()?;
            let target = scenario.cr_rand(target)?;
            let opts = CalibrationOptions {
                fine_episodes: samples,
                seed,
                ..CalibrationOptions::default()
            };
            let cal = match calibrate(&base, target, tolerance, &opts) {
                Ok(c) => c,
                Err(qmarl::Error::Calibration { message, sweep }) => {
                    eprintln!("comm_range,random_cr");
                    for (r, cr) in sweep {
                        eprintln!("{r},{cr:.3}");
                    }
                    bail!("calibration failed: {message}");
                }
                Err(e) => return Err(e.into()),
            };
            let path = out.join("scenarios").join(format!("{}.toml", scenario.name()));
            std::fs::create_dir_all(path.parent().expect("has parent"))?;
            cal.config.save(&path)?;
            println!(
                "comm_range = {} gives random CR {:.2} (target {target} +- {tolerance}); wrote {}",
                cal.config.comm_range,
                cal.measured_cr,
                path.display()
            );
        }
        Command::Train {
            scenario,
            solution,
            seeds,
            steps,
        } => {
            let cfg = scenario.load()?;
            let arch = solution.resolve(&cfg)?;
            let counts = arch.weight_counts(cfg.global_obs_dim());
            println!(
                "{solution} on {}: {arch:?}, classical {} + quantum {} weights",
                scenario.name(),
                counts.classical,
                counts.quantum
            );
            if solution.is_quantum() {
                for row in parity_audit(&cfg)?.iter().filter(|r| r.quantum == solution) {
                    println!(
                        "paired with {}: {} vs {} total weights ({:.1}% gap)",
                        row.classical,
                        row.quantum_total,
                        row.classical_total,
                        100.0 * row.relative_gap
                    );
                }
            }
            let campaign = Campaign::new(solution, &scenario.name(), cfg);
            let records = run_training(&campaign, &seeds, steps, &out)?;
            for r in &records {
                let last = r.curve.last().map_or(f64::NAN, |p| p.cr_mean);
                println!("seed {}: {} points, final CR {last:.2}", r.seed, r.curve.len());
            }
        }
        Command::Eval {
            scenario,
            solution,
            seeds,
            samples,
        } => {
            let cfg = scenario.load()?;
            match solution {
                None => {
                    let cr = random_baseline(&cfg, samples, 1_000_000)?;
                    println!("random agents: mean CR {cr:.2} over {samples} episodes");
                }
                Some(id) => {
                    for seed in seeds {
                        let path = RunPaths::new(&out, &scenario.name(), id, seed).actor();
                        let ckpt = NetCheckpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
                        let actor = GaussianPolicy::from_checkpoint(&ckpt)?;
                        let ev = evaluate(&actor, &cfg, samples, 1_000_000 + seed)?;
                        println!(
                            "{id} seed {seed}: CR {:.2} +- {:.2} over {samples} episodes",
                            ev.mean, ev.std
                        );
                    }
                }
            }
        }
        Command::Metrics {
            scenario,
            solution,
            cr_rand,
        } => {
            let cr_rand = scenario.cr_rand(cr_rand)?;
            println!("solution,mcr,ccr,cs_thousands,threshold,n_seeds");
            for id in solution {
                let records =
                    load_records(&out, &scenario.name(), id).with_context(|| format!("loading curves of {id}"))?;
                let m = derive_metrics(&records, cr_rand)?;
                let opt = |v: Option<f64>| v.map_or("not reached".to_owned(), |x| format!("{x:.2}"));
                println!(
                    "{id},{:.2},{},{},{:.2},{}",
                    m.mcr,
                    m.ccr.map_or("n/a".to_owned(), |x| format!("{x:.2}")),
                    opt(m.cs_thousands),
                    m.threshold,
                    records.len()
                );
            }
        }
        Command::Qmetrics {
            solution,
            samples,
            seed,
        } => {
            let ids = if solution.is_empty() {
                SolutionId::registry()
                    .into_iter()
                    .filter(SolutionId::is_quantum)
                    .collect()
            } else {
                solution
            };
            let rows = qmetrics_report(&ids, samples, seed)?;
            let path = out.join("qmetrics.csv");
            write_qmetrics_csv(&path, &rows)?;
            for r in &rows {
                println!("{}", r.to_record().join(","));
            }
            println!("wrote {}", path.display());
        }
        Command::Export {
            scenario,
            solution,
            format,
            ema,
        } => {
            for id in solution {
                let records =
                    load_records(&out, &scenario.name(), id).with_context(|| format!("loading curves of {id}"))?;
                let path = export(&records, format, ema, &out.join("export"))?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
