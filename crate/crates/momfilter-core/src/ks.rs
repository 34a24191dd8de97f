//! Expansion of the normalized conditional characteristic function.
//!
//! Unlike the unnormalized recursion, the normalized equation is nonlinear:
//! the observation sources are compensated by conditional moments of the
//! observation function, which are read off the expansion itself at zero
//! frequency. Orders are implemented up to two; the closed displays for
//! higher orders are not available, and with substepping first order is
//! usually all that is needed.
//!
//! Per step, with `E = exp(a0 dt)` and all sources from the pre-step
//! snapshot:
//!
//! ```text
//! p0 <- E p0
//! p1 <- E (p1 + O1 p0 dt + sum_c [obs_c p0 - h0_c p0] dY_c)
//! p2 <- E (p2 + [O1 p1 + O2 p0 - sum_c (obs_c p0 - h0_c p0) h0_c] dt
//!            + sum_c [obs_c p1 - h0_c p1 - h1_c p0] dY_c)
//! ```
//!
//! This is the unnormalized recursion per order plus the moment
//! compensators; equivalently, order one is the unnormalized order-one
//! update minus the mass-compensation term.
//!
//! where `h{i}_c` is the observation polynomial applied as the derivative
//! operator to order `i`, read at zero frequency. Those moments use the same
//! stencils as the descriptor applications, so the compensation at zero
//! frequency cancels exactly and the order-zero mass stays pinned at one.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{build_symbols, InitialLaw, OperatorSymbols, PerturbedModel};
use crate::polyops::MultiPoly;
use crate::scheme::SolveOutput;
use crate::simulate::ObservationPath;
use crate::spectral::{apply_descriptor, apply_poly_as_dxi, SpectralState, XiGrid};
use crate::zakai::{align_increments, steps_for, SolverConfig, StepDiagnostics, BLOWUP_LIMIT};

/// Highest order for which the normalized displays are implemented.
pub const KS_MAX_ORDER: usize = 2;

/// One in-flight normalized solve.
pub struct KsRun<'a> {
    symbols: &'a OperatorSymbols,
    obs_polys: Vec<MultiPoly>,
    increments: Vec<DVector<f64>>,
    config: SolverConfig,
    pub state: SpectralState,
    pub diagnostics: Vec<StepDiagnostics>,
    step_index: usize,
}

impl<'a> KsRun<'a> {
    pub fn new(
        symbols: &'a OperatorSymbols,
        obs_polys: &[MultiPoly],
        law: &InitialLaw,
        path: &ObservationPath,
        grid: XiGrid,
        config: SolverConfig,
        horizon: f64,
    ) -> Result<Self> {
        config.validate()?;
        if config.max_order > KS_MAX_ORDER {
            return Err(Error::InvalidConfig(format!(
                "normalized expansion is implemented up to order {KS_MAX_ORDER}, \
                 requested {}",
                config.max_order
            )));
        }
        let steps = steps_for(horizon, config.dt)?;
        if steps % config.substeps != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} sub-periods do not divide {steps} steps",
                config.substeps
            )));
        }
        if path.obs_dim() != obs_polys.len() {
            return Err(Error::DimensionMismatch(format!(
                "path carries {} observation components, model has {}",
                path.obs_dim(),
                obs_polys.len()
            )));
        }
        let increments = align_increments(path, config.dt, steps)?;
        let state = SpectralState::from_initial_law(grid, config.max_order, law)?;
        Ok(Self {
            symbols,
            obs_polys: obs_polys.to_vec(),
            increments,
            config,
            state,
            diagnostics: Vec::new(),
            step_index: 0,
        })
    }

    /// Observation moments of one expansion order from the snapshot:
    /// the observation polynomial applied as the derivative operator, read
    /// at zero frequency.
    fn obs_moments(&self, order: &[Complex64]) -> Result<Vec<Complex64>> {
        let zero = self.state.grid.zero_index();
        self.obs_polys
            .iter()
            .map(|h| Ok(apply_poly_as_dxi(order, h, &self.state.grid)?[zero]))
            .collect()
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.step_index as f64 * self.config.dt;
        let dt = self.config.dt;
        let dy = self
            .increments
            .get(self.step_index)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no observation increment for step {}", self.step_index))
            })?
            .clone();

        let grid = self.state.grid.clone();
        let len = grid.len();
        let max_order = self.state.max_order();
        let exp_factor: Vec<Complex64> = (0..len)
            .map(|k| (self.symbols.a0(t, &grid.xi_at(k)) * dt).exp())
            .collect();

        let p0 = self.state.orders[0].clone();
        let p1 = (max_order >= 1).then(|| self.state.orders[1].clone());

        let h0 = self.obs_moments(&p0)?;
        // Compensated observation action on order zero, one array per
        // component: obs_c p0 - h0_c p0.
        let obs_descs = self.symbols.observation();
        let mut comp0: Vec<Vec<Complex64>> = Vec::with_capacity(obs_descs.len());
        if max_order >= 1 {
            for (c, desc) in obs_descs.iter().enumerate() {
                let mut arr = apply_descriptor(&p0, desc, &grid)?;
                for (a, v) in arr.iter_mut().zip(&p0) {
                    *a -= h0[c] * v;
                }
                comp0.push(arr);
            }
        }

        let mut next: Vec<Vec<Complex64>> = Vec::with_capacity(max_order + 1);

        // Order 0: free flow only.
        next.push(p0.clone());

        // Order 1: first-order generator plus the compensated observation
        // source.
        if max_order >= 1 {
            let mut buf = p1.clone().expect("order 1 present");
            let order1 = self.symbols.order1(t);
            if !order1.is_empty() {
                let acted = apply_descriptor(&p0, order1, &grid)?;
                for (b, v) in buf.iter_mut().zip(&acted) {
                    *b += dt * v;
                }
            }
            for (c, arr) in comp0.iter().enumerate() {
                if dy[c] == 0.0 {
                    continue;
                }
                for (b, v) in buf.iter_mut().zip(arr) {
                    *b += dy[c] * v;
                }
            }
            next.push(buf);
        }

        // Order 2: perturbation generators, the moment-compensation drift,
        // and the compensated observation source on order 1.
        if max_order >= 2 {
            let p1 = p1.as_ref().expect("order 1 present");
            let h1 = self.obs_moments(p1)?;
            let mut buf = self.state.orders[2].clone();

            let order1 = self.symbols.order1(t);
            if !order1.is_empty() {
                let acted = apply_descriptor(p1, order1, &grid)?;
                for (b, v) in buf.iter_mut().zip(&acted) {
                    *b += dt * v;
                }
            }
            let order2 = self.symbols.order2();
            if !order2.is_empty() {
                let acted = apply_descriptor(&p0, order2, &grid)?;
                for (b, v) in buf.iter_mut().zip(&acted) {
                    *b += dt * v;
                }
            }
            // Moment-compensation drift: -(obs_c p0 - h0_c p0) h0_c dt.
            for (c, arr) in comp0.iter().enumerate() {
                for (b, vc) in buf.iter_mut().zip(arr) {
                    *b -= dt * h0[c] * vc;
                }
            }
            // dY bracket: (obs_c p1 - h0_c p1 - h1_c p0) dY_c.
            for (c, desc) in obs_descs.iter().enumerate() {
                if dy[c] == 0.0 {
                    continue;
                }
                let mut arr = apply_descriptor(p1, desc, &grid)?;
                for ((a, v1), v0) in arr.iter_mut().zip(p1).zip(&p0) {
                    *a -= h0[c] * v1 + h1[c] * v0;
                }
                for (b, v) in buf.iter_mut().zip(&arr) {
                    *b += dy[c] * v;
                }
            }
            next.push(buf);
        }

        for (j, buf) in next.iter_mut().enumerate() {
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
        }

        self.state.orders = next;
        self.step_index += 1;
        self.state.t = self.step_index as f64 * dt;
        self.diagnostics.push(StepDiagnostics {
            t: self.state.t,
            mass: self.state.mass(self.config.eps).re,
            symmetry_residual: self.state.symmetry_residual(),
        });
        Ok(())
    }

    /// Sub-period boundary fold, as in the unnormalized driver.
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
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        if steps > self.increments.len() {
            return Err(Error::InvalidConfig(format!(
                "{steps} steps requested but only {} increments are available",
                self.increments.len()
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

/// Solve the normalized problem along an observation path.
pub fn ks_solve(
    model: &PerturbedModel,
    law: &InitialLaw,
    path: &ObservationPath,
    grid: XiGrid,
    config: SolverConfig,
    horizon: f64,
) -> Result<SolveOutput> {
    let symbols = build_symbols(model)?;
    let steps = steps_for(horizon, config.dt)?;
    let mut run = KsRun::new(&symbols, &model.observation, law, path, grid, config, horizon)?;
    run.run(steps)?;
    Ok(SolveOutput {
        state: run.state,
        diagnostics: run.diagnostics,
    })
}
