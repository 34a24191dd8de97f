//! End-to-end experiment execution: fit, simulate or load the observation
//! path, run the configured solver variants, invert to densities, compare
//! against the configured oracle, and write the per-variant CSV artifacts
//! plus a machine-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use momfilter_core::model::{free_moments, InitialLaw};
use momfilter_core::reference;
use momfilter_core::scheme::{scheme_by_name, SolveInput};
use momfilter_core::simulate::{self, ObservationPath};
use momfilter_core::spectral::{invert_to_density, mean_and_variance, DensityGrid, XiGrid};
use momfilter_core::zakai::SolverConfig;

use crate::config::{resolve_variants, ExperimentConfig, ModelConfig, ResolvedVariant};
use crate::metrics::diff_densities;
use crate::CliError;

/// Outcome of one variant.
#[derive(Debug, Clone)]
pub struct VariantReport {
    pub name: String,
    /// `None` when the variant completed; the failure text otherwise.
    pub failure: Option<String>,
    pub linf: Option<f64>,
    pub l1: Option<f64>,
    pub peak_gap: Option<f64>,
    /// Unnormalized mass of the final state.
    pub mass: Option<f64>,
    /// Worst Hermitian-symmetry residual over the run.
    pub symmetry_residual: Option<f64>,
    pub mean: Option<f64>,
    pub var: Option<f64>,
    pub oracle_mean: Option<f64>,
    pub oracle_var: Option<f64>,
    pub runtime_ms: u128,
}

impl VariantReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub variants: Vec<VariantReport>,
    /// The sampled oracle density, when one was configured.
    pub exact: Option<DensityGrid>,
}

impl ExperimentReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Run a full experiment into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    verbose: bool,
) -> Result<ExperimentReport, CliError> {
    if cfg.model.dim() != 1 {
        return Err(CliError::Config(
            "experiments invert densities and are one-dimensional".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let law = cfg.build_law()?;
    let horizon = cfg.path.horizon;
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(horizon > 0.0) {
        return Err(CliError::Config("path.horizon must be positive".into()));
    }

    let path = build_path(cfg, &law, seed_override)?;
    if let Some(p) = &path {
        simulate::save_path(p, &out_dir.join("path.csv"))?;
    }

    let window = (cfg.output.z_min, cfg.output.z_max, cfg.output.points);
    let exact = build_oracle_density(cfg, &law, path.as_ref(), horizon, window)?;
    if let Some(d) = &exact {
        d.write_csv(&out_dir.join("density_exact.csv"))?;
    }
    let kalman = build_kalman_trajectory(cfg, &law, path.as_ref())?;
    if let Some(kb) = &kalman {
        write_kalman_csv(kb, &out_dir.join("kalman_exact.csv"))?;
    }

    let mut reports = Vec::new();
    for variant in resolve_variants(cfg) {
        let report = run_variant(
            cfg,
            &law,
            path.as_ref(),
            horizon,
            window,
            exact.as_ref(),
            kalman.as_ref(),
            &variant,
            out_dir,
            verbose,
        )?;
        reports.push(report);
    }

    write_summary(&reports, &out_dir.join("summary.csv"))?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        variants: reports,
        exact,
    })
}

fn build_path(
    cfg: &ExperimentConfig,
    law: &InitialLaw,
    seed_override: Option<u64>,
) -> Result<Option<ObservationPath>, CliError> {
    match cfg.path.source.as_str() {
        "none" => Ok(None),
        "simulate" => {
            if cfg.path.steps == 0 {
                return Err(CliError::Config("path.steps must be positive".into()));
            }
            let seed = seed_override.unwrap_or(cfg.path.seed);
            let model = cfg.model.build(None)?;
            let path = simulate::simulate_paths(&model, law, cfg.path.horizon, cfg.path.steps, seed)?;
            Ok(Some(path))
        }
        "file" => {
            let file = cfg
                .path
                .file
                .as_ref()
                .ok_or_else(|| CliError::Config("path.file missing".into()))?;
            Ok(Some(simulate::load_path(Path::new(file))?))
        }
        other => Err(CliError::Config(format!("unknown path source '{other}'"))),
    }
}

fn build_oracle_density(
    cfg: &ExperimentConfig,
    law: &InitialLaw,
    path: Option<&ObservationPath>,
    horizon: f64,
    window: (f64, f64, usize),
) -> Result<Option<DensityGrid>, CliError> {
    let kind = cfg.oracle.kind.as_deref().unwrap_or("none");
    match kind {
        "none" | "kalman" => Ok(None),
        "cir" => {
            let ModelConfig::Cir { theta, mu, sigma, .. } = &cfg.model else {
                return Err(CliError::Config("cir oracle needs a cir model".into()));
            };
            let (x0, _) = law.base_moments();
            let oracle = reference::cir_exact_density(*theta, *mu, *sigma, x0[0], horizon)?;
            Ok(Some(oracle.sample(window.0, window.1, window.2)))
        }
        "benes" => {
            let ModelConfig::Benes { a, sigma, h1, h2, .. } = &cfg.model else {
                return Err(CliError::Config("benes oracle needs a benes model".into()));
            };
            let path = path.ok_or_else(|| {
                CliError::Config("benes oracle needs an observation path".into())
            })?;
            let oracle = reference::benes_exact_density(
                *a,
                *sigma,
                *h1,
                *h2,
                path,
                horizon,
                (window.0, window.1),
            )?;
            Ok(Some(oracle.sample(window.0, window.1, window.2)))
        }
        other => Err(CliError::Config(format!("unknown oracle kind '{other}'"))),
    }
}

fn build_kalman_trajectory(
    cfg: &ExperimentConfig,
    law: &InitialLaw,
    path: Option<&ObservationPath>,
) -> Result<Option<Vec<reference::KalmanPoint>>, CliError> {
    if cfg.oracle.kind.as_deref() != Some("kalman") {
        return Ok(None);
    }
    let ModelConfig::Benes { a, sigma, h1, h2, .. } = &cfg.model else {
        return Err(CliError::Config(
            "the kalman oracle applies to the linear (a = 0) observation model".into(),
        ));
    };
    if *a != 0.0 {
        return Err(CliError::Config(
            "the kalman oracle requires a = 0 (no drift nonlinearity)".into(),
        ));
    }
    let path = path.ok_or_else(|| CliError::Config("kalman oracle needs a path".into()))?;
    let (x0, cov) = law.base_moments();
    let kb = reference::kalman_bucy(0.0, 0.0, *h1, *h2, *sigma, x0[0], cov[(0, 0)], path)?;
    Ok(Some(kb))
}

#[allow(clippy::too_many_arguments)]
fn run_variant(
    cfg: &ExperimentConfig,
    law: &InitialLaw,
    path: Option<&ObservationPath>,
    horizon: f64,
    window: (f64, f64, usize),
    exact: Option<&DensityGrid>,
    kalman: Option<&Vec<reference::KalmanPoint>>,
    variant: &ResolvedVariant,
    out_dir: &Path,
    verbose: bool,
) -> Result<VariantReport, CliError> {
    let started = Instant::now();
    let mut report = VariantReport {
        name: variant.name.clone(),
        failure: None,
        linf: None,
        l1: None,
        peak_gap: None,
        mass: None,
        symmetry_residual: None,
        mean: None,
        var: None,
        oracle_mean: None,
        oracle_var: None,
        runtime_ms: 0,
    };

    let outcome = (|| -> Result<(), CliError> {
        let model = cfg.model.build(variant.weight_w)?;
        let scheme = scheme_by_name(&variant.scheme)?;
        let xi_max = if variant.xi_max > 0.0 {
            variant.xi_max
        } else {
            let (_, cov) = free_moments(&model, law, horizon)?;
            XiGrid::half_width_for_covariance(&cov)?
        };
        let grid = XiGrid::isotropic(1, variant.modes, xi_max)?
            .with_stencil_order(variant.stencil_order)?;
        let config = SolverConfig {
            max_order: variant.max_order,
            dt: variant.dt,
            substeps: variant.substeps,
            substep_order: variant.substep_order,
            eps: variant.eps,
        };
        let out = scheme.solve(&SolveInput {
            model: &model,
            law,
            path: if scheme.requires_path() { path } else { None },
            grid,
            config,
            horizon,
        })?;

        if verbose {
            let mut text = String::from("t,mass,symmetry_residual\n");
            for d in &out.diagnostics {
                writeln!(text, "{},{},{}", d.t, d.mass, d.symmetry_residual).expect("write");
            }
            std::fs::write(
                out_dir.join(format!("diagnostics_{}.csv", variant.name)),
                text,
            )?;
        }

        report.mass = Some(out.state.mass(variant.eps).re);
        report.symmetry_residual = Some(
            out.diagnostics
                .iter()
                .map(|d| d.symmetry_residual)
                .fold(0.0, f64::max),
        );
        let (mean, var) = mean_and_variance(&out.state, variant.eps)?;
        report.mean = Some(mean);
        report.var = Some(var);

        let density = invert_to_density(&out.state, variant.eps, window)?.normalized()?;
        density.write_csv(&out_dir.join(format!("density_{}.csv", variant.name)))?;

        if let Some(exact) = exact {
            let (linf, l1, peak_gap) = diff_densities(&density, exact)?;
            report.linf = Some(linf);
            report.l1 = Some(l1);
            report.peak_gap = Some(peak_gap);
            let mut text = String::from("z,error\n");
            for (i, (a, b)) in density.values.iter().zip(&exact.values).enumerate() {
                writeln!(text, "{},{}", density.z_at(i), a - b).expect("write");
            }
            std::fs::write(out_dir.join(format!("error_{}.csv", variant.name)), text)?;
        }
        if let Some(kb) = kalman {
            let last = kb.last().expect("non-empty trajectory");
            report.oracle_mean = Some(last.mean);
            report.oracle_var = Some(last.var);
        }
        Ok(())
    })();

    report.runtime_ms = started.elapsed().as_millis();
    match outcome {
        Ok(()) => {}
        Err(CliError::Numeric(msg)) => report.failure = Some(msg),
        Err(other) => return Err(other),
    }
    Ok(report)
}

fn write_kalman_csv(kb: &[reference::KalmanPoint], path: &Path) -> Result<(), CliError> {
    let mut text = String::from("t,mean,var\n");
    for p in kb {
        writeln!(text, "{},{},{}", p.t, p.mean, p.var).expect("write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_summary(reports: &[VariantReport], path: &Path) -> Result<(), CliError> {
    let mut text = String::from(
        "variant,status,linf,l1,peak_gap,mass,symmetry_residual,mean,var,oracle_mean,oracle_var,runtime_ms\n",
    );
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            if r.succeeded() { "ok" } else { "failed" },
            fmt(r.linf),
            fmt(r.l1),
            fmt(r.peak_gap),
            fmt(r.mass),
            fmt(r.symmetry_residual),
            fmt(r.mean),
            fmt(r.var),
            fmt(r.oracle_mean),
            fmt(r.oracle_var),
            r.runtime_ms
        )
        .expect("write");
    }
    std::fs::write(path, text)?;
    Ok(())
}
