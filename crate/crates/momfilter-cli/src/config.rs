//! TOML experiment schema and its mapping onto the library types.
//!
//! An experiment file has `[model]`, `[path]`, `[solver]` and `[output]`
//! blocks, optional `[law]` and `[oracle]` blocks, and any number of
//! `[[variants]]` entries overriding solver fields (and the fit weight) per
//! run. Polynomials in custom models use the line-per-term text form
//! `c * x1^a1 x2^a2 ...`.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use momfilter_core::fit::{FitMethod, FitSpec, FitTarget, Parity};
use momfilter_core::model::{presets, InitialLaw, PerturbedModel, TimeFunction};
use momfilter_core::polyops::MultiPoly;

use crate::CliError;

fn default_eps() -> f64 {
    1.0
}

fn default_substeps() -> usize {
    1
}

fn default_modes() -> usize {
    129
}

fn default_stencil() -> usize {
    2
}

fn default_scheme() -> String {
    "zakai".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub law: Option<LawConfig>,
    pub path: PathConfig,
    pub solver: SolverBlock,
    pub output: OutputBlock,
    #[serde(default)]
    pub oracle: OracleBlock,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("bad experiment file: {e}")))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The initial law: explicit `[law]` block or the model's natural
    /// default (point mass at the long-run level or at the origin).
    pub fn build_law(&self) -> Result<InitialLaw, CliError> {
        if let Some(law) = &self.law {
            return law.build(self.model.dim());
        }
        match &self.model {
            ModelConfig::Cir { mu, .. } => Ok(InitialLaw::dirac_scalar(*mu)),
            ModelConfig::Benes { .. } => Ok(InitialLaw::dirac_scalar(0.0)),
            ModelConfig::Custom { .. } => Err(CliError::Config(
                "custom models need an explicit [law] block".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Square-root mean-reverting model, Taylor-expanded volatility.
    Cir {
        theta: f64,
        mu: f64,
        sigma: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        fit: Option<FitBlock>,
    },
    /// Tanh-drift filtering model with linear observation.
    Benes {
        a: f64,
        sigma: f64,
        h1: f64,
        h2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        fit: Option<FitBlock>,
    },
    /// Fully explicit model with polynomials in text form.
    Custom {
        n: usize,
        m: usize,
        d: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        free_drift: Vec<f64>,
        free_diffusion: Vec<Vec<f64>>,
        #[serde(default)]
        drift: Vec<String>,
        #[serde(default)]
        diffusion: Vec<Vec<String>>,
        #[serde(default)]
        obs_coupling: Vec<Vec<String>>,
        #[serde(default)]
        observation: Vec<String>,
    },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Custom { n, .. } => *n,
            _ => 1,
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            ModelConfig::Cir { eps, .. }
            | ModelConfig::Benes { eps, .. }
            | ModelConfig::Custom { eps, .. } => *eps,
        }
    }

    /// Build the model; `weight_override` replaces the fit weight for sweep
    /// variants (meaningful for the least-squares drift fit).
    pub fn build(&self, weight_override: Option<f64>) -> Result<PerturbedModel, CliError> {
        match self {
            ModelConfig::Cir {
                theta,
                mu,
                sigma,
                eps,
                fit,
            } => {
                let degree = fit.as_ref().and_then(|f| f.degree).unwrap_or(3);
                presets::cir(*theta, *mu, *sigma, *eps, degree).map_err(Into::into)
            }
            ModelConfig::Benes {
                a,
                sigma,
                h1,
                h2,
                eps,
                fit,
            } => {
                let spec = benes_fit_spec(*a, *sigma, fit.as_ref(), weight_override)?;
                presets::benes(*a, *sigma, *h1, *h2, *eps, &spec).map_err(Into::into)
            }
            ModelConfig::Custom {
                n,
                m,
                d,
                eps,
                free_drift,
                free_diffusion,
                drift,
                diffusion,
                obs_coupling,
                observation,
            } => {
                let parse_vec = |texts: &[String], what: &str| -> Result<Vec<MultiPoly>, CliError> {
                    texts
                        .iter()
                        .map(|t| {
                            MultiPoly::parse(*n, t)
                                .map_err(|e| CliError::Config(format!("{what}: {e}")))
                        })
                        .collect()
                };
                let parse_mat = |texts: &[Vec<String>],
                                 rows: usize,
                                 cols: usize,
                                 what: &str|
                 -> Result<Vec<Vec<MultiPoly>>, CliError> {
                    if texts.is_empty() {
                        return Ok(vec![vec![MultiPoly::zero(*n); cols]; rows]);
                    }
                    texts
                        .iter()
                        .map(|row| parse_vec(row, what))
                        .collect::<Result<Vec<_>, _>>()
                };
                let drift = if drift.is_empty() {
                    vec![MultiPoly::zero(*n); *n]
                } else {
                    parse_vec(drift, "drift")?
                };
                let observation = if observation.is_empty() {
                    vec![MultiPoly::zero(*n); *m]
                } else {
                    parse_vec(observation, "observation")?
                };
                let model = PerturbedModel {
                    n: *n,
                    m: *m,
                    d: *d,
                    eps: *eps,
                    free_drift: TimeFunction::Constant(DVector::from_row_slice(free_drift)),
                    free_diffusion: TimeFunction::Constant(DMatrix::from_fn(*n, *d, |i, j| {
                        free_diffusion[i][j]
                    })),
                    drift,
                    diffusion: parse_mat(diffusion, *n, *d, "diffusion")?,
                    obs_coupling: parse_mat(obs_coupling, *n, *m, "obs_coupling")?,
                    observation,
                };
                model.validate()?;
                Ok(model)
            }
        }
    }
}

/// Fit configuration for the drift polynomial of the tanh model (or the
/// Taylor degree of the square-root volatility).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub degree: Option<u32>,
    #[serde(default)]
    pub weight_w: Option<f64>,
    #[serde(default)]
    pub parity: Option<String>,
    #[serde(default)]
    pub range_lo: Option<f64>,
    #[serde(default)]
    pub range_hi: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub center: Option<f64>,
}

pub fn parse_parity(text: &str) -> Result<Parity, CliError> {
    match text {
        "any" => Ok(Parity::Any),
        "odd" => Ok(Parity::Odd),
        "even" => Ok(Parity::Even),
        other => Err(CliError::Config(format!("unknown parity '{other}'"))),
    }
}

fn benes_fit_spec(
    a: f64,
    sigma: f64,
    block: Option<&FitBlock>,
    weight_override: Option<f64>,
) -> Result<FitSpec, CliError> {
    let method = block
        .and_then(|b| b.method.as_deref())
        .unwrap_or("lsm")
        .to_string();
    let degree = block.and_then(|b| b.degree).unwrap_or(11);
    match method.as_str() {
        "lsm" => {
            let weight_w = weight_override
                .or_else(|| block.and_then(|b| b.weight_w))
                .unwrap_or(2.0);
            let parity = parse_parity(block.and_then(|b| b.parity.as_deref()).unwrap_or("odd"))?;
            let x_lo = block.and_then(|b| b.range_lo).unwrap_or(-5.0 * sigma);
            let x_hi = block.and_then(|b| b.range_hi).unwrap_or(5.0 * sigma);
            let step = block.and_then(|b| b.step).unwrap_or(0.2 * sigma);
            Ok(FitSpec {
                method: FitMethod::WeightedLsm {
                    x_lo,
                    x_hi,
                    step,
                    degree,
                    weight_w,
                    weight_sigma: sigma,
                    parity,
                },
                target: FitTarget::TanhDrift { a, sigma },
            })
        }
        "taylor" => Ok(FitSpec {
            method: FitMethod::Taylor {
                center: block.and_then(|b| b.center).unwrap_or(0.0),
                degree,
            },
            target: FitTarget::TanhDrift { a, sigma },
        }),
        other => Err(CliError::Config(format!("unknown fit method '{other}'"))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub kind: String,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub prefactor: Option<String>,
}

impl LawConfig {
    pub fn build(&self, n: usize) -> Result<InitialLaw, CliError> {
        let x0 = DVector::from_row_slice(&self.x0);
        let cov = || -> Result<DMatrix<f64>, CliError> {
            let rows = self
                .cov
                .as_ref()
                .ok_or_else(|| CliError::Config("law needs a covariance".into()))?;
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        let law = match self.kind.as_str() {
            "dirac" => InitialLaw::Dirac { x0 },
            "gaussian" => InitialLaw::Gaussian { x0, cov: cov()? },
            "gram-charlier" => {
                let text = self
                    .prefactor
                    .as_ref()
                    .ok_or_else(|| CliError::Config("gram-charlier law needs a prefactor".into()))?;
                InitialLaw::GramCharlier {
                    x0,
                    cov: cov()?,
                    prefactor: MultiPoly::parse(n, text)
                        .map_err(|e| CliError::Config(e.to_string()))?,
                }
            }
            other => return Err(CliError::Config(format!("unknown law kind '{other}'"))),
        };
        law.validate(n)?;
        Ok(law)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// "simulate", "file", or "none" (no observation; unconditional runs).
    pub source: String,
    /// Experiment horizon; also the simulation horizon.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub file: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    pub max_order: usize,
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub substep_order: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Grid half-width; 0 selects the envelope rule from the free covariance.
    #[serde(default)]
    pub xi_max: f64,
    #[serde(default = "default_stencil")]
    pub stencil_order: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub z_min: f64,
    pub z_max: f64,
    pub points: usize,
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    /// "cir", "benes", "kalman", or "none"/absent.
    #[serde(default)]
    pub kind: Option<String>,
    /// When set, any successful variant exceeding this sup-norm error against
    /// the oracle makes the run exit with the oracle-mismatch code.
    #[serde(default)]
    pub max_linf: Option<f64>,
}

/// Per-variant overrides of the solver block (and the fit weight).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub max_order: Option<usize>,
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub substep_order: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub weight_w: Option<f64>,
    #[serde(default)]
    pub modes: Option<usize>,
    #[serde(default)]
    pub xi_max: Option<f64>,
    #[serde(default)]
    pub stencil_order: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
}

/// A variant with every field resolved.
#[derive(Debug, Clone)]
pub struct ResolvedVariant {
    pub name: String,
    pub scheme: String,
    pub max_order: usize,
    pub substeps: usize,
    pub substep_order: usize,
    pub eps: f64,
    pub weight_w: Option<f64>,
    pub modes: usize,
    pub xi_max: f64,
    pub stencil_order: usize,
    pub dt: f64,
}

/// Expand the variant list against the base solver block; no variants means
/// one run named "base".
pub fn resolve_variants(cfg: &ExperimentConfig) -> Vec<ResolvedVariant> {
    let base = &cfg.solver;
    let model_eps = cfg.model.eps();
    let make = |v: Option<&VariantConfig>| -> ResolvedVariant {
        let name = v.map(|v| v.name.clone()).unwrap_or_else(|| "base".into());
        let max_order = v.and_then(|v| v.max_order).unwrap_or(base.max_order);
        ResolvedVariant {
            name,
            scheme: v
                .and_then(|v| v.scheme.clone())
                .unwrap_or_else(|| base.scheme.clone()),
            max_order,
            substeps: v.and_then(|v| v.substeps).unwrap_or(base.substeps),
            substep_order: v
                .and_then(|v| v.substep_order)
                .or(base.substep_order)
                .unwrap_or(max_order)
                .min(max_order),
            eps: v.and_then(|v| v.eps).or(base.eps).unwrap_or(model_eps),
            weight_w: v.and_then(|v| v.weight_w),
            modes: v.and_then(|v| v.modes).unwrap_or(base.modes),
            xi_max: v.and_then(|v| v.xi_max).unwrap_or(base.xi_max),
            stencil_order: v
                .and_then(|v| v.stencil_order)
                .unwrap_or(base.stencil_order),
            dt: v.and_then(|v| v.dt).unwrap_or(base.dt),
        }
    };
    if cfg.variants.is_empty() {
        vec![make(None)]
    } else {
        cfg.variants.iter().map(|v| make(Some(v))).collect()
    }
}
