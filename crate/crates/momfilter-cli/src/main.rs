//! `momfilter`: experiment CLI for the momentum-space filtering solvers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use momfilter_cli::config::{parse_parity, ExperimentConfig};
use momfilter_cli::experiment::{run_experiment, ExperimentReport};
use momfilter_cli::metrics::diff_densities;
use momfilter_cli::presets;
use momfilter_cli::{resolve_out_dir, CliError};
use momfilter_core::fit::{self, FitMethod, FitSpec, FitTarget};
use momfilter_core::simulate;
use momfilter_core::spectral::DensityGrid;

#[derive(Parser)]
#[command(
    name = "momfilter",
    version,
    about = "Momentum-space asymptotic-expansion solvers for nonlinear filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration file.
    Run {
        config: PathBuf,
        /// Output directory (relative paths resolve under $MOMFILTER_OUT).
        #[arg(long)]
        out: Option<String>,
        /// Override the path seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-step diagnostics CSVs.
        #[arg(long)]
        verbose: bool,
    },
    /// Run a committed preset experiment (fig1..fig6).
    Preset {
        name: String,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        verbose: bool,
    },
    /// Fit a polynomial to a target function and print its text form.
    Fit {
        #[arg(long, value_enum)]
        target: TargetKind,
        /// Drift steepness (tanh-drift target).
        #[arg(long)]
        a: Option<f64>,
        /// Volatility scale (tanh-drift target and fit weight).
        #[arg(long)]
        sigma: Option<f64>,
        /// Long-run level (sqrt-vol target).
        #[arg(long)]
        mu: Option<f64>,
        /// CSV of `x,f` rows (table target).
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lsm")]
        method: MethodKind,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long)]
        weight_w: Option<f64>,
        #[arg(long, default_value = "odd")]
        parity: String,
        #[arg(long)]
        range_lo: Option<f64>,
        #[arg(long)]
        range_hi: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Expansion point (Taylor method).
        #[arg(long)]
        center: Option<f64>,
    },
    /// Simulate an observation path from the model of a config file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two density CSV files (sup gap, integrated gap, peak gap).
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKind {
    TanhDrift,
    SqrtVol,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Lsm,
    Taylor,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            verbose,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let fallback = config
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "experiment".into());
            run_and_report(&cfg, out.as_deref(), &fallback, seed, verbose)
        }
        Command::Preset {
            name,
            out,
            seed,
            verbose,
        } => {
            let cfg = presets::preset_config(&name)?;
            run_and_report(&cfg, out.as_deref(), &name, seed, verbose)
        }
        Command::Fit {
            target,
            a,
            sigma,
            mu,
            file,
            method,
            degree,
            weight_w,
            parity,
            range_lo,
            range_hi,
            step,
            center,
        } => {
            let need = |v: Option<f64>, what: &str| {
                v.ok_or_else(|| CliError::Config(format!("--{what} is required for this target")))
            };
            let target = match target {
                TargetKind::TanhDrift => FitTarget::TanhDrift {
                    a: need(a, "a")?,
                    sigma: need(sigma, "sigma")?,
                },
                TargetKind::SqrtVol => FitTarget::SqrtVol { mu: need(mu, "mu")? },
                TargetKind::Table => {
                    let file =
                        file.ok_or_else(|| CliError::Config("--file is required".into()))?;
                    load_table(&file)?
                }
            };
            let spec = match method {
                MethodKind::Taylor => FitSpec {
                    method: FitMethod::Taylor {
                        center: center.unwrap_or(0.0),
                        degree: degree.unwrap_or(3),
                    },
                    target,
                },
                MethodKind::Lsm => {
                    let sigma = sigma.unwrap_or(1.0);
                    FitSpec {
                        method: FitMethod::WeightedLsm {
                            x_lo: range_lo.unwrap_or(-5.0 * sigma),
                            x_hi: range_hi.unwrap_or(5.0 * sigma),
                            step: step.unwrap_or(0.2 * sigma),
                            degree: degree.unwrap_or(11),
                            weight_w: weight_w.unwrap_or(2.0),
                            weight_sigma: sigma,
                            parity: parse_parity(&parity)?,
                        },
                        target,
                    }
                }
            };
            let poly = fit::fit(&spec).map_err(CliError::from)?;
            println!("{poly}");
            Ok(())
        }
        Command::Simulate {
            config,
            seed,
            steps,
            horizon,
            out,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let model = cfg.model.build(None)?;
            let law = cfg.build_law()?;
            let horizon = horizon.unwrap_or(cfg.path.horizon);
            let steps = steps.unwrap_or(cfg.path.steps);
            let seed = seed.unwrap_or(cfg.path.seed);
            let path = simulate::simulate_paths(&model, &law, horizon, steps, seed)?;
            simulate::save_path(&path, &out)?;
            println!(
                "wrote {} steps over [0, {horizon}] (seed {seed}) to {}",
                path.steps(),
                out.display()
            );
            Ok(())
        }
        Command::Diff { a, b } => {
            let da = DensityGrid::read_csv(&a).map_err(CliError::from)?;
            let db = DensityGrid::read_csv(&b).map_err(CliError::from)?;
            let (linf, l1, peak_gap) = diff_densities(&da, &db)?;
            println!("linf {linf}\nl1 {l1}\npeak_gap {peak_gap}");
            Ok(())
        }
    }
}

fn run_and_report(
    cfg: &ExperimentConfig,
    out_flag: Option<&str>,
    fallback: &str,
    seed: Option<u64>,
    verbose: bool,
) -> Result<(), CliError> {
    let out_dir = resolve_out_dir(out_flag, cfg.output.dir.as_deref(), fallback);
    let report = run_experiment(cfg, &out_dir, seed, verbose)?;
    print_report(&report);

    if report.variants.iter().all(|v| !v.succeeded()) {
        return Err(CliError::Numeric(
            "every variant failed numerically".into(),
        ));
    }
    if let Some(max_linf) = cfg.oracle.max_linf {
        for v in report.variants.iter().filter(|v| v.succeeded()) {
            if let Some(linf) = v.linf {
                if linf > max_linf {
                    return Err(CliError::OracleMismatch(format!(
                        "variant '{}': sup error {linf:.3e} exceeds the allowed {max_linf:.3e}",
                        v.name
                    )));
                }
            }
        }
    }
    Ok(())
}

fn print_report(report: &ExperimentReport) {
    println!("wrote artifacts to {}", report.out_dir.display());
    for v in &report.variants {
        match &v.failure {
            None => {
                let err = v
                    .linf
                    .map(|l| format!(" linf {l:.4e}"))
                    .unwrap_or_default();
                println!(
                    "  {:<18} ok   mass {:.6}{}  ({} ms)",
                    v.name,
                    v.mass.unwrap_or(f64::NAN),
                    err,
                    v.runtime_ms
                );
            }
            Some(msg) => println!("  {:<18} FAILED: {msg}", v.name),
        }
    }
}

fn load_table(file: &std::path::Path) -> Result<FitTarget, CliError> {
    let text = std::fs::read_to_string(file)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.chars().any(|c| c.is_alphabetic()) {
            continue; // header
        }
        let mut parts = line.split(',');
        let x: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CliError::Config(format!("line {}: bad x", lineno + 1)))?;
        let y: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CliError::Config(format!("line {}: bad f(x)", lineno + 1)))?;
        xs.push(x);
        ys.push(y);
    }
    Ok(FitTarget::Table { xs, ys })
}
