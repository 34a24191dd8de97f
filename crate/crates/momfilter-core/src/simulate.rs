//! Joint sample paths of the signal and observation under the physical
//! measure, plus path file I/O.
//!
//! Paths are generated by Euler-Maruyama with the full nonlinear drift and
//! diffusion (free parts plus the stored polynomial perturbations evaluated
//! at the current state), with `dY = eps H(X) dt + dW` sharing the
//! observation noise. The generator is counter-based and seeded, so a path
//! is a pure function of `(model, law, horizon, steps, seed)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{InitialLaw, PerturbedModel};

/// An observation path: strictly increasing times starting at zero and one
/// increment vector per step. The hidden signal samples ride along for
/// diagnostics when available; nothing downstream depends on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    times: Vec<f64>,
    increments: Vec<DVector<f64>>,
    signal: Option<Vec<DVector<f64>>>,
}

impl ObservationPath {
    pub fn new(
        times: Vec<f64>,
        increments: Vec<DVector<f64>>,
        signal: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(Error::BadPath("times must start at 0".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::BadPath(format!(
                    "times must be strictly increasing (row {})",
                    i + 2
                )));
            }
        }
        if increments.len() + 1 != times.len() {
            return Err(Error::BadPath(format!(
                "{} increments for {} times",
                increments.len(),
                times.len()
            )));
        }
        let m = increments.first().map(|v| v.len()).unwrap_or(0);
        for (i, dy) in increments.iter().enumerate() {
            if dy.len() != m {
                return Err(Error::BadPath(format!("increment {i} has inconsistent dimension")));
            }
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadPath(format!("increment {i} is not finite")));
            }
        }
        if let Some(sig) = &signal {
            if sig.len() != times.len() {
                return Err(Error::BadPath("signal samples must align with times".into()));
            }
        }
        Ok(Self {
            times,
            increments,
            signal,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    pub fn signal(&self) -> Option<&[DVector<f64>]> {
        self.signal.as_deref()
    }

    pub fn obs_dim(&self) -> usize {
        self.increments.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty times")
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// Cumulative observation values, starting at zero.
    pub fn cumulative(&self) -> Vec<DVector<f64>> {
        let m = self.obs_dim();
        let mut acc = DVector::zeros(m);
        let mut out = Vec::with_capacity(self.times.len());
        out.push(acc.clone());
        for dy in &self.increments {
            acc += dy;
            out.push(acc.clone());
        }
        out
    }

    /// Scale every increment by a constant (used by linearity checks).
    pub fn scaled(&self, factor: f64) -> ObservationPath {
        ObservationPath {
            times: self.times.clone(),
            increments: self.increments.iter().map(|dy| dy * factor).collect(),
            signal: self.signal.clone(),
        }
    }
}

/// Euler-Maruyama simulation of the perturbed system.
pub fn simulate_paths(
    model: &PerturbedModel,
    law: &InitialLaw,
    horizon: f64,
    steps: usize,
    seed: u64,
) -> Result<ObservationPath> {
    model.validate()?;
    law.validate(model.n)?;
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "simulation needs a positive horizon and at least one step, got {horizon} / {steps}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |k: usize| -> DVector<f64> {
        DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)))
    };

    let mut x = match law {
        InitialLaw::Dirac { x0 } => x0.clone(),
        InitialLaw::Gaussian { x0, cov } => {
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                Error::InvalidModel("initial covariance must be positive definite".into())
            })?;
            x0 + chol.l() * draw(model.n)
        }
        InitialLaw::GramCharlier { .. } => {
            return Err(Error::InvalidConfig(
                "cannot draw initial samples from a polynomial-corrected law; \
                 it is a signed expansion, not a sampling distribution"
                    .into(),
            ))
        }
    };

    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let eps = model.eps;
    let mut times = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    let mut signal = Vec::with_capacity(steps + 1);
    times.push(0.0);
    signal.push(x.clone());

    let eval_vec = |polys: &[crate::polyops::MultiPoly], at: &DVector<f64>| -> Result<DVector<f64>> {
        let point: Vec<f64> = at.iter().cloned().collect();
        let mut out = DVector::zeros(polys.len());
        for (i, p) in polys.iter().enumerate() {
            out[i] = p.eval_re(&point)?.re;
        }
        Ok(out)
    };
    let eval_mat = |rows: &[Vec<crate::polyops::MultiPoly>],
                    cols: usize,
                    at: &DVector<f64>|
     -> Result<DMatrix<f64>> {
        let point: Vec<f64> = at.iter().cloned().collect();
        let mut out = DMatrix::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                out[(i, j)] = p.eval_re(&point)?.re;
            }
        }
        Ok(out)
    };

    for k in 0..steps {
        let t = k as f64 * dt;
        let dv = draw(model.d) * sqrt_dt;
        let dw = draw(model.m) * sqrt_dt;

        // Left-point evaluations throughout.
        let obs_val = eval_vec(&model.observation, &x)?;
        let dy = &obs_val * (eps * dt) + &dw;

        let drift = model.free_drift.at(t) + eval_vec(&model.drift, &x)? * eps;
        let diffusion = model.free_diffusion.at(t) + eval_mat(&model.diffusion, model.d, &x)? * eps;
        let coupling = eval_mat(&model.obs_coupling, model.m, &x)? * eps;

        x = &x + drift * dt + diffusion * dv + coupling * dw;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadPath(format!(
                "simulation produced a non-finite state at step {k}"
            )));
        }

        times.push((k + 1) as f64 * dt);
        increments.push(dy);
        signal.push(x.clone());
    }

    ObservationPath::new(times, increments, Some(signal))
}

/// Write a path as CSV: `t,dY1..dYm[,X1..Xn]`. Increments are the native
/// stored quantity, so save followed by load reproduces the path exactly;
/// the first increment row is a zero placeholder aligned with `t = 0`.
pub fn save_path(path: &ObservationPath, file: &Path) -> Result<()> {
    let m = path.obs_dim();
    let mut out = String::from("t");
    if m == 1 {
        out.push_str(",dY");
    } else {
        for c in 1..=m {
            write!(out, ",dY{c}").expect("string write");
        }
    }
    let n_sig = path.signal().map(|s| s[0].len()).unwrap_or(0);
    if n_sig == 1 {
        out.push_str(",X");
    } else {
        for c in 1..=n_sig {
            write!(out, ",X{c}").expect("string write");
        }
    }
    out.push('\n');
    for (i, &t) in path.times().iter().enumerate() {
        write!(out, "{t}").expect("string write");
        for c in 0..m {
            let v = if i == 0 { 0.0 } else { path.increments()[i - 1][c] };
            write!(out, ",{v}").expect("string write");
        }
        if let Some(sig) = path.signal() {
            for v in sig[i].iter().take(n_sig) {
                write!(out, ",{v}").expect("string write");
            }
        }
        out.push('\n');
    }
    std::fs::write(file, out)?;
    Ok(())
}

/// Read a path CSV. Accepts cumulative observation columns (`Y...`, first
/// row must be zero) or increment columns (`dY...`, first row is a zero
/// placeholder), plus optional signal columns.
pub fn load_path(file: &Path) -> Result<ObservationPath> {
    let text = std::fs::read_to_string(file)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::BadPath("empty path file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::BadPath(format!(
            "first column must be 't', got '{}'",
            cols.first().unwrap_or(&"")
        )));
    }
    let is_dy = cols.get(1).map(|c| c.starts_with("dY")).unwrap_or(false);
    let obs_cols = cols[1..]
        .iter()
        .take_while(|c| if is_dy { c.starts_with("dY") } else { c.starts_with('Y') })
        .count();
    if obs_cols == 0 {
        return Err(Error::BadPath("no observation columns (Y or dY) found".into()));
    }
    let sig_cols = cols[1 + obs_cols..]
        .iter()
        .take_while(|c| c.starts_with('X'))
        .count();
    if 1 + obs_cols + sig_cols != cols.len() {
        return Err(Error::BadPath(format!(
            "unrecognized trailing columns in header '{header}'"
        )));
    }

    let mut times = Vec::new();
    let mut obs_rows: Vec<DVector<f64>> = Vec::new();
    let mut sig_rows: Vec<DVector<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::BadPath(format!(
                "row {}: {} fields, expected {}",
                lineno + 1,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::BadPath(format!("row {}: bad number '{s}'", lineno + 1)))
        };
        let t = parse(fields[0])?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::BadPath(format!(
                    "row {}: time {t} does not increase past {prev}",
                    lineno + 1
                )));
            }
        }
        times.push(t);
        let obs = DVector::from_iterator(
            obs_cols,
            fields[1..1 + obs_cols]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<f64>>>()?,
        );
        obs_rows.push(obs);
        if sig_cols > 0 {
            let sig = DVector::from_iterator(
                sig_cols,
                fields[1 + obs_cols..]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<f64>>>()?,
            );
            sig_rows.push(sig);
        }
    }
    if times.len() < 2 {
        return Err(Error::BadPath("path needs at least two rows".into()));
    }

    let increments: Vec<DVector<f64>> = if is_dy {
        if obs_rows[0].iter().any(|&v| v != 0.0) {
            return Err(Error::BadPath(
                "row 2: the first dY row is a placeholder and must be zero".into(),
            ));
        }
        obs_rows[1..].to_vec()
    } else {
        if obs_rows[0].iter().any(|&v| v != 0.0) {
            return Err(Error::BadPath("row 2: cumulative Y must start at 0".into()));
        }
        obs_rows.windows(2).map(|w| &w[1] - &w[0]).collect()
    };
    let signal = (sig_cols > 0).then_some(sig_rows);
    ObservationPath::new(times, increments, signal)
}
