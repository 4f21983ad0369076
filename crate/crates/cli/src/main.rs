use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergoband::adapt::{lepski_estimates, lepski_from_estimates, projection_bias};
use ergoband::density::estimate_density;
use ergoband::drift::{estimate_drift_direct, estimate_drift_plugin};
use ergoband::experiment::{
    band_weights, density_critical_value, drift_critical_value, fit_band, run_coverage,
    ExperimentConfig, FittedBand, Method, ModelConfig, Target,
};
use ergoband::simulate::{derive_seed, Trajectory};
use ergoband::variance::zeta_gaussian_bound;
use ergoband::wavelet::DEFAULT_SUP_GRID;
use ergoband::Error;
use serde_json::json;

/// Version tag of every JSON document the tool writes.
const SCHEMA_VERSION: &str = "ergoband/1";

#[derive(Parser)]
#[command(
    name = "ergoband",
    version,
    about = "Wavelet confidence bands for ergodic diffusions"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Drift estimator; implies a drift target.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Nominal non-coverage level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Plugin,
    Direct,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory from the configured model.
    Simulate {
        #[arg(long, value_enum, default_value = "csv")]
        format: TrajectoryFormat,
    },
    /// Projection density estimate from a trajectory.
    EstimateDensity {
        #[arg(long)]
        input: PathBuf,
    },
    /// Drift estimate from a trajectory.
    EstimateDrift {
        #[arg(long)]
        input: PathBuf,
    },
    /// Confidence band and plot data from a trajectory.
    Band {
        #[arg(long)]
        input: PathBuf,
    },
    /// Lepski selection diagnostics and the adaptive drift band.
    Adapt {
        #[arg(long)]
        input: PathBuf,
    },
    /// Monte Carlo coverage of the configured band.
    Coverage,
    /// Critical value for the configured band.
    Quantile {
        /// Trajectory supplying the variance estimates.
        #[arg(long, conflicts_with = "sigma")]
        input: Option<PathBuf>,
        /// Use this variance instead of estimating it (gaussian bound only).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Bias ratios `|pi_{J+1} b - b| / |pi_J b - b|` of the model drift.
    SelfsimCheck {
        #[arg(long, default_value_t = 4)]
        from: i32,
        #[arg(long, default_value_t = 9)]
        to: i32,
    },
}

type Result<T> = std::result::Result<T, Error>;

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = global.alpha {
        cfg.band.alpha = alpha;
    }
    if let Some(m) = global.method {
        cfg.band.target = Target::Drift;
        cfg.band.method = match m {
            MethodArg::Plugin => Method::Plugin,
            MethodArg::Direct => Method::Direct,
            MethodArg::Adaptive => Method::Adaptive,
        };
    }
    if let Some(out) = &global.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.out_dir.as_deref().unwrap_or("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    println!("{}", path.display());
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

fn envelope(kind: &str, body: serde_json::Value) -> serde_json::Value {
    json!({ "schema": SCHEMA_VERSION, "kind": kind, "body": body })
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let traj = Trajectory::read(path)?;
    traj.validate()?;
    Ok(traj)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let basis = cfg.basis.build()?;
    let [a, b] = cfg.band.interval;
    let dir = out_dir(&cfg)?;
    match cli.command {
        Command::Simulate { format } => {
            let traj = cfg.model.simulate(&cfg.simulation, cfg.seed)?;
            match format {
                TrajectoryFormat::Csv => write(&dir, "trajectory.csv", &traj.to_csv())?,
                TrajectoryFormat::Json => write(&dir, "trajectory.json", &traj.to_json()?)?,
            };
        }
        Command::EstimateDensity { input } => {
            let traj = read_trajectory(&input)?;
            let est = estimate_density(&traj, &basis, cfg.level()?, a, b)?;
            write_json(
                &dir,
                "density.json",
                &envelope("density-estimate", serde_json::to_value(est)?),
            )?;
        }
        Command::EstimateDrift { input } => {
            let traj = read_trajectory(&input)?;
            let est = match cfg.band.method {
                Method::Plugin => estimate_drift_plugin(&traj, &basis, cfg.level()?, a, b)?,
                Method::Direct => {
                    estimate_drift_direct(&traj, &basis, cfg.level()?, Some(cfg.offset()), a, b)?
                }
                Method::Adaptive => {
                    let lepski = cfg.lepski_config()?;
                    let mut estimates = lepski_estimates(&traj, &basis, &lepski, a, b)?;
                    let sel = lepski_from_estimates(&basis, &estimates, &lepski, traj.len())?;
                    estimates.swap_remove((sel.j_hat - lepski.j_min) as usize)
                }
            };
            write_json(
                &dir,
                "drift.json",
                &envelope("drift-estimate", serde_json::to_value(est)?),
            )?;
        }
        Command::Band { input } => {
            let traj = read_trajectory(&input)?;
            let band = fit_band(&cfg, &basis, &traj, derive_seed(cfg.seed, 1))?;
            write_band(&dir, &basis, &band)?;
        }
        Command::Adapt { input } => {
            let mut cfg = cfg;
            cfg.band.target = Target::Drift;
            cfg.band.method = Method::Adaptive;
            cfg.validate()?;
            let traj = read_trajectory(&input)?;
            let band = fit_band(&cfg, &basis, &traj, derive_seed(cfg.seed, 1))?;
            if let FittedBand::Drift {
                selection: Some(sel),
                band: inner,
            } = &band
            {
                let body = json!({
                    "lepski": cfg.lepski_config()?,
                    "selection": sel,
                    "band": inner.adaptive,
                });
                write_json(&dir, "adapt.json", &envelope("adaptive-diagnostics", body))?;
            }
            write_band(&dir, &basis, &band)?;
        }
        Command::Coverage => {
            let log_path = dir.join("replications.jsonl");
            let log = Mutex::new(File::create(&log_path)?);
            let started = SystemTime::now();
            let mut report = run_coverage(&cfg, cli.global.workers, |r| {
                let line = serde_json::to_string(r).unwrap_or_default();
                if let Ok(mut f) = log.lock() {
                    let _ = writeln!(f, "{line}");
                }
                let status = match r.covered {
                    Some(true) => "covered".to_string(),
                    Some(false) => "missed".to_string(),
                    None => format!("failed: {}", r.error.as_deref().unwrap_or("")),
                };
                eprintln!("replication {} seed {} {status}", r.index, r.seed);
            })?;
            // The output location is not part of the experiment.
            report.config.out_dir = None;
            let s = &report.summary;
            eprintln!(
                "coverage {}/{} = {:.3} +- {:.3}, failures {}",
                s.covered, s.completed, s.coverage, s.standard_error, s.failures
            );
            write_json(
                &dir,
                "coverage.json",
                &envelope("coverage-report", serde_json::to_value(&report)?),
            )?;
            let meta = json!({
                "started_unix": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                "runtime_seconds": report.runtime.as_secs_f64(),
                "workers": cli.global.workers,
                "log": log_path.display().to_string(),
            });
            write_json(&dir, "metadata.json", &envelope("run-metadata", meta))?;
        }
        Command::Quantile { input, sigma } => {
            let cv = match (sigma, input) {
                (Some(sigma), _) => {
                    let level = cfg.level()?;
                    zeta_gaussian_bound(
                        cfg.band.alpha,
                        sigma,
                        &basis,
                        &band_weights(&cfg),
                        level,
                        a,
                        b,
                    )?
                }
                (None, Some(path)) => {
                    let traj = read_trajectory(&path)?;
                    let seed = cfg.seed;
                    match (cfg.band.target, cfg.band.method) {
                        (Target::Drift, Method::Direct) => {
                            let est = estimate_drift_direct(
                                &traj,
                                &basis,
                                cfg.level()?,
                                Some(cfg.offset()),
                                a,
                                b,
                            )?;
                            drift_critical_value(&cfg, &basis, &traj, &est, seed)?
                        }
                        (Target::Drift, Method::Adaptive) => {
                            return Err(Error::Config(
                                "adaptive critical values come from the adapt subcommand".into(),
                            ))
                        }
                        _ => {
                            let est = estimate_density(&traj, &basis, cfg.level()?, a, b)?;
                            density_critical_value(&cfg, &basis, &traj, &est, seed)?
                        }
                    }
                }
                (None, None) => {
                    return Err(Error::Config("quantile needs --sigma or --input".into()))
                }
            };
            write_json(
                &dir,
                "critical_value.json",
                &envelope("critical-value", serde_json::to_value(cv)?),
            )?;
        }
        Command::SelfsimCheck { from, to } => {
            if from < basis.base_level() as i32 || to <= from {
                return Err(Error::Config(format!(
                    "selfsim-check needs j0 <= from < to, got {from}..{to}"
                )));
            }
            let s = match cfg.model {
                ModelConfig::SelfSimilar { smoothness, .. } => smoothness as f64,
                _ => cfg.band.smoothness,
            };
            let drift = cfg.model.drift()?;
            let biases = (from..=to)
                .map(|j| projection_bias(&basis, &drift, j, a, b).map(|v| (j, v)))
                .collect::<Result<Vec<_>>>()?;
            let levels: Vec<_> = biases
                .iter()
                .map(|&(j, bias)| json!({ "level": j, "bias": bias, "scaled": bias * 2f64.powf(j as f64 * s) }))
                .collect();
            let ratios: Vec<f64> = biases.windows(2).map(|w| w[1].1 / w[0].1).collect();
            let scaled: Vec<f64> = biases
                .iter()
                .map(|&(j, bias)| bias * 2f64.powf(j as f64 * s))
                .collect();
            let body = json!({
                "smoothness": s,
                "expected_ratio": 2f64.powf(-s),
                "levels": levels,
                "ratios": ratios,
                "d1": scaled.iter().cloned().fold(f64::INFINITY, f64::min),
                "d2": scaled.iter().cloned().fold(0.0, f64::max),
            });
            write_json(&dir, "selfsim.json", &envelope("selfsim-check", body))?;
        }
    }
    Ok(())
}

fn write_band(
    dir: &Path,
    basis: &ergoband::wavelet::WaveletBasis,
    band: &FittedBand,
) -> Result<()> {
    let body: serde_json::Value = serde_json::from_str(&band.export_json()?)?;
    let kind = match band {
        FittedBand::Density(_) => "density-band",
        FittedBand::Drift { .. } => "drift-band",
    };
    write_json(dir, "band.json", &envelope(kind, body))?;
    match band.plot_csv(basis, DEFAULT_SUP_GRID) {
        Ok(csv) => {
            write(dir, "band.csv", &csv)?;
        }
        Err(Error::Config(msg)) => eprintln!("no plot data: {msg}"),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.global.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            if json_errors {
                let body = json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": code });
                eprintln!("{}", envelope("error", body));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code as u8)
        }
    }
}
