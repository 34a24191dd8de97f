//! Runtime registry of the interchangeable expansion schemes.
//!
//! Each solver variant sits behind [`FilterScheme`] and is selected by name
//! from configuration: `"zakai"` (unnormalized, conditional), `"ks"`
//! (normalized, conditional, orders up to two) and `"unconditional"` (no
//! observation).

use crate::error::{Error, Result};
use crate::model::{InitialLaw, PerturbedModel};
use crate::simulate::ObservationPath;
use crate::spectral::{SpectralState, XiGrid};
use crate::zakai::{SolverConfig, StepDiagnostics};
use crate::{ks, zakai};

/// Everything a scheme needs for one solve.
pub struct SolveInput<'a> {
    pub model: &'a PerturbedModel,
    pub law: &'a InitialLaw,
    pub path: Option<&'a ObservationPath>,
    pub grid: XiGrid,
    pub config: SolverConfig,
    pub horizon: f64,
}

/// Final state plus the per-step health records.
#[derive(Debug)]
pub struct SolveOutput {
    pub state: SpectralState,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// A solver strategy: one way of advancing the expansion to the horizon.
pub trait FilterScheme: Sync {
    /// Registry name, as written in configuration files.
    fn name(&self) -> &'static str;

    /// Whether the scheme consumes an observation path.
    fn requires_path(&self) -> bool;

    /// Highest supported truncation order, if capped.
    fn order_cap(&self) -> Option<usize> {
        None
    }

    fn solve(&self, input: &SolveInput) -> Result<SolveOutput>;
}

struct ZakaiScheme;
struct KsScheme;
struct UnconditionalScheme;

impl FilterScheme for ZakaiScheme {
    fn name(&self) -> &'static str {
        "zakai"
    }

    fn requires_path(&self) -> bool {
        true
    }

    fn solve(&self, input: &SolveInput) -> Result<SolveOutput> {
        let path = input
            .path
            .ok_or_else(|| Error::InvalidConfig("the conditional scheme needs a path".into()))?;
        zakai::solve(
            input.model,
            input.law,
            path,
            input.grid.clone(),
            input.config,
            input.horizon,
        )
    }
}

impl FilterScheme for KsScheme {
    fn name(&self) -> &'static str {
        "ks"
    }

    fn requires_path(&self) -> bool {
        true
    }

    fn order_cap(&self) -> Option<usize> {
        Some(ks::KS_MAX_ORDER)
    }

    fn solve(&self, input: &SolveInput) -> Result<SolveOutput> {
        let path = input
            .path
            .ok_or_else(|| Error::InvalidConfig("the normalized scheme needs a path".into()))?;
        ks::ks_solve(
            input.model,
            input.law,
            path,
            input.grid.clone(),
            input.config,
            input.horizon,
        )
    }
}

impl FilterScheme for UnconditionalScheme {
    fn name(&self) -> &'static str {
        "unconditional"
    }

    fn requires_path(&self) -> bool {
        false
    }

    fn solve(&self, input: &SolveInput) -> Result<SolveOutput> {
        zakai::solve_unconditional(
            input.model,
            input.law,
            input.horizon,
            input.grid.clone(),
            input.config,
        )
    }
}

static SCHEMES: &[&dyn FilterScheme] = &[&ZakaiScheme, &KsScheme, &UnconditionalScheme];

/// Look a scheme up by its registry name.
pub fn scheme_by_name(name: &str) -> Result<&'static dyn FilterScheme> {
    SCHEMES
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::UnknownScheme(name.to_string()))
}

/// All registered scheme names.
pub fn scheme_names() -> Vec<&'static str> {
    SCHEMES.iter().map(|s| s.name()).collect()
}
