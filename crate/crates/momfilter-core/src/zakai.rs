//! Order-by-order integration of the unnormalized filtering recursion on the
//! frequency grid, with the substepping driver.
//!
//! Each step advances every order `j` as
//!
//! ```text
//! orders[j] <- exp(a0 dt) (orders[j]
//!                          + [O1 orders[j-1] + O2 orders[j-2]] dt
//!                          + obs(orders[j-1]) . dY)
//! ```
//!
//! with all sources read from the pre-step snapshot (left-point convention)
//! and the diagonal free part applied exactly per mode as a complex
//! exponential. Order 0 therefore reproduces the free Gaussian characteristic
//! function to rounding, for any step size.
//!
//! The substepping driver splits the horizon into sub-periods; at each
//! internal boundary the truncated expansion is folded into a fresh order
//! zero and the higher orders restart from zero. The folded state is specific
//! to the expansion parameter used at the fold, unlike a plain
//! (single-period) run whose orders remain parameter-generic.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{build_symbols, InitialLaw, OperatorSymbols, PerturbedModel};
use crate::scheme::SolveOutput;
use crate::simulate::ObservationPath;
use crate::spectral::{apply_descriptor, SpectralState, XiGrid};

/// Any state magnitude beyond this aborts the run with a diagnostic; small
/// perturbation series can diverge violently without substepping and the
/// failure must be loud, not silent garbage.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Solver configuration shared by the expansion schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Expansion truncation order (the state carries orders `0..=max_order`).
    pub max_order: usize,
    /// Time step; sub-period boundaries and the observation grid must align
    /// with it.
    pub dt: f64,
    /// Number of sub-periods; 1 means a plain single-period run.
    pub substeps: usize,
    /// Truncation used when folding at sub-period boundaries.
    pub substep_order: usize,
    /// Expansion parameter applied at folds and at summation time.
    pub eps: f64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        if self.substep_order > self.max_order {
            return Err(Error::InvalidConfig(format!(
                "substep order {} exceeds max order {}",
                self.substep_order, self.max_order
            )));
        }
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps = {} must be finite and non-negative",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Per-step health record: weighted mass at zero frequency and the worst
/// Hermitian-symmetry residual across orders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub symmetry_residual: f64,
}

/// Observation increments resampled onto the solver grid: the path must be at
/// least as fine as `dt` and its times must hit every step boundary; coarser
/// paths are rejected rather than interpolated, since interpolating noise
/// increments silently changes the problem.
pub(crate) fn align_increments(
    path: &ObservationPath,
    dt: f64,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let horizon = steps as f64 * dt;
    if path.horizon() < horizon - 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "path ends at {} but the solve needs {horizon}",
            path.horizon()
        )));
    }
    let m = path.obs_dim();
    let times = path.times();
    let tol = 1e-9 * dt.max(1.0);
    let mut out = Vec::with_capacity(steps);
    let mut k = 0usize; // path step index
    for step in 0..steps {
        let boundary = (step + 1) as f64 * dt;
        let mut acc = DVector::zeros(m);
        while k < path.steps() && times[k + 1] <= boundary + tol {
            acc += &path.increments()[k];
            k += 1;
        }
        if (times[k] - boundary).abs() > tol {
            return Err(Error::InvalidConfig(format!(
                "observation grid does not align with dt = {dt}: no sample at t = {boundary} \
                 (path is coarser than the solver step or offset from it)"
            )));
        }
        out.push(acc);
    }
    Ok(out)
}

/// One in-flight solve: the symbols, the aligned observation increments (if
/// any), the evolving state, and per-step diagnostics.
pub struct ZakaiRun<'a> {
    symbols: &'a OperatorSymbols,
    increments: Option<Vec<DVector<f64>>>,
    config: SolverConfig,
    pub state: SpectralState,
    pub diagnostics: Vec<StepDiagnostics>,
    step_index: usize,
    /// How many leading orders can be nonzero; sources from identically zero
    /// orders are skipped, which is exact.
    active_orders: usize,
}

impl<'a> ZakaiRun<'a> {
    pub fn new(
        symbols: &'a OperatorSymbols,
        law: &InitialLaw,
        path: Option<&ObservationPath>,
        grid: XiGrid,
        config: SolverConfig,
        horizon: f64,
    ) -> Result<Self> {
        config.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon {horizon} must be positive")));
        }
        let steps = steps_for(horizon, config.dt)?;
        if steps % config.substeps != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} sub-periods do not divide {steps} steps",
                config.substeps
            )));
        }
        let increments = match path {
            Some(p) => {
                if p.obs_dim() != symbols.observation().len() {
                    return Err(Error::DimensionMismatch(format!(
                        "path carries {} observation components, model has {}",
                        p.obs_dim(),
                        symbols.observation().len()
                    )));
                }
                Some(align_increments(p, config.dt, steps)?)
            }
            None => None,
        };
        let max_deriv = symbols
            .order1(0.0)
            .max_derivative_degree()
            .max(symbols.order2().max_derivative_degree())
            .max(
                symbols
                    .observation()
                    .iter()
                    .map(|d| d.max_derivative_degree())
                    .max()
                    .unwrap_or(0),
            );
        if max_deriv as usize >= grid.modes_per_dim() {
            return Err(Error::BadGrid(format!(
                "descriptors request derivative degree {max_deriv} on {} modes",
                grid.modes_per_dim()
            )));
        }
        let state = SpectralState::from_initial_law(grid, config.max_order, law)?;
        Ok(Self {
            symbols,
            increments,
            config,
            state,
            diagnostics: Vec::new(),
            step_index: 0,
            active_orders: 1,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    fn total_steps(&self) -> usize {
        self.increments
            .as_ref()
            .map(|i| i.len())
            .unwrap_or(usize::MAX)
    }

    /// Advance every order by one step from the pre-step snapshot.
    pub fn step(&mut self) -> Result<()> {
        let t = self.step_index as f64 * self.config.dt;
        let dt = self.config.dt;
        let dy = match &self.increments {
            Some(incs) => Some(
                incs.get(self.step_index)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "no observation increment for step {}",
                            self.step_index
                        ))
                    })?
                    .clone(),
            ),
            None => None,
        };

        let grid = &self.state.grid;
        let len = grid.len();
        let order1 = self.symbols.order1(t);
        let order2 = self.symbols.order2();
        let obs = self.symbols.observation();

        let exp_factor: Vec<Complex64> = (0..len)
            .map(|k| (self.symbols.a0(t, &grid.xi_at(k)) * dt).exp())
            .collect();

        let max_order = self.state.max_order();
        let mut next: Vec<Vec<Complex64>> = Vec::with_capacity(max_order + 1);
        for j in 0..=max_order {
            let mut buf = self.state.orders[j].clone();
            if j >= 1 && j - 1 < self.active_orders {
                let src = &self.state.orders[j - 1];
                if !order1.is_empty() {
                    let acted = apply_descriptor(src, order1, grid)?;
                    for (b, v) in buf.iter_mut().zip(&acted) {
                        *b += dt * v;
                    }
                }
                if let Some(dy) = &dy {
                    for (c, desc) in obs.iter().enumerate() {
                        if desc.is_empty() || dy[c] == 0.0 {
                            continue;
                        }
                        let acted = apply_descriptor(src, desc, grid)?;
                        for (b, v) in buf.iter_mut().zip(&acted) {
                            *b += dy[c] * v;
                        }
                    }
                }
            }
            if j >= 2 && j - 2 < self.active_orders && !order2.is_empty() {
                let acted = apply_descriptor(&self.state.orders[j - 2], order2, grid)?;
                for (b, v) in buf.iter_mut().zip(&acted) {
                    *b += dt * v;
                }
            }
            for (k, b) in buf.iter_mut().enumerate() {
                *b *= exp_factor[k];
                if !b.re.is_finite() || !b.im.is_finite() || b.norm() > BLOWUP_LIMIT {
                    return Err(Error::BlowUp {
                        step: self.step_index,
                        t,
                        order: j,
                        mode: k,
                        detail: format!("state value {b}"),
                    });
                }
            }
            next.push(buf);
        }

        self.state.orders = next;
        self.step_index += 1;
        self.state.t = self.step_index as f64 * dt;
        self.active_orders = (self.active_orders + 1).min(max_order + 1);
        self.diagnostics.push(StepDiagnostics {
            t: self.state.t,
            mass: self.state.mass(self.config.eps).re,
            symmetry_residual: self.state.symmetry_residual(),
        });
        Ok(())
    }

    /// Fold the truncated expansion into a fresh order zero (sub-period
    /// boundary update) and restart the higher orders from zero.
    pub fn collapse(&mut self) {
        let k = self.config.substep_order;
        let eps = self.config.eps;
        let len = self.state.grid.len();
        let mut folded = vec![Complex64::new(0.0, 0.0); len];
        let mut w = 1.0;
        for j in 0..=k.min(self.state.max_order()) {
            for (f, v) in folded.iter_mut().zip(&self.state.orders[j]) {
                *f += w * v;
            }
            w *= eps;
        }
        self.state.orders[0] = folded;
        for order in self.state.orders.iter_mut().skip(1) {
            order.fill(Complex64::new(0.0, 0.0));
        }
        self.active_orders = 1;
    }

    /// Run the substepping schedule over `steps` steps.
    pub fn run(&mut self, steps: usize) -> Result<()> {
        if steps > self.total_steps() {
            return Err(Error::InvalidConfig(format!(
                "{steps} steps requested but only {} increments are available",
                self.total_steps()
            )));
        }
        let per_period = steps / self.config.substeps;
        for period in 0..self.config.substeps {
            for _ in 0..per_period {
                self.step()?;
            }
            if period + 1 < self.config.substeps {
                self.collapse();
            }
        }
        Ok(())
    }
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    let raw = horizon / dt;
    let steps = raw.round();
    if steps < 1.0 || (raw - steps).abs() > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "dt = {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(steps as usize)
}

/// Solve the conditional problem along an observation path over
/// `[0, horizon]`.
pub fn solve(
    model: &PerturbedModel,
    law: &InitialLaw,
    path: &ObservationPath,
    grid: XiGrid,
    config: SolverConfig,
    horizon: f64,
) -> Result<SolveOutput> {
    let symbols = build_symbols(model)?;
    let steps = steps_for(horizon, config.dt)?;
    let mut run = ZakaiRun::new(&symbols, law, Some(path), grid, config, horizon)?;
    run.run(steps)?;
    Ok(SolveOutput {
        state: run.state,
        diagnostics: run.diagnostics,
    })
}

/// Solve the no-observation problem: the same recursion with the observation
/// sources removed.
pub fn solve_unconditional(
    model: &PerturbedModel,
    law: &InitialLaw,
    horizon: f64,
    grid: XiGrid,
    config: SolverConfig,
) -> Result<SolveOutput> {
    let symbols = build_symbols(model)?;
    let steps = steps_for(horizon, config.dt)?;
    let mut run = ZakaiRun::new(&symbols, law, None, grid, config, horizon)?;
    run.run(steps)?;
    Ok(SolveOutput {
        state: run.state,
        diagnostics: run.diagnostics,
    })
}
