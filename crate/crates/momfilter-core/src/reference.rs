//! Exact and closed-form benchmark solutions.
//!
//! Everything here is independent of the grid solvers: the square-root
//! model's non-central chi-squared marginal, the closed-form filtered density
//! of the tanh-drift model, the Kalman-Bucy filter for linear models, and the
//! analytic Hermite-form first-order density correction of the square-root
//! example.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simulate::ObservationPath;
use crate::spectral::{trapezoid, DensityGrid};

/// How an oracle density was normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Closed-form normalization over the full support.
    Analytic,
    /// Numerically normalized on a finite window.
    NumericOnWindow,
}

/// A benchmark density: a pointwise evaluator plus its normalization tag.
pub struct OracleDensity {
    eval: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub normalization: Normalization,
}

impl OracleDensity {
    pub fn eval(&self, z: f64) -> f64 {
        (self.eval)(z)
    }

    /// Sample onto a uniform window as a [`DensityGrid`].
    pub fn sample(&self, z_min: f64, z_max: f64, points: usize) -> DensityGrid {
        let dz = (z_max - z_min) / (points - 1) as f64;
        let values: Vec<f64> = (0..points).map(|i| self.eval(z_min + i as f64 * dz)).collect();
        DensityGrid::from_values(z_min, z_max, values)
    }

    pub fn write_csv(&self, z_min: f64, z_max: f64, points: usize, path: &Path) -> Result<()> {
        self.sample(z_min, z_max, points).write_csv(path)
    }
}

/// Natural log of the gamma function (Lanczos, g = 7, 9 coefficients;
/// relative error around 1e-13 on the positive axis).
#[allow(clippy::excessive_precision)] // published coefficient table
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + 7.5;
        let mut a = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Transition density of the square-root mean-reverting diffusion
/// `dX = theta (mu - X) dt + sigma sqrt(X) dV` started at `x0`, evaluated at
/// time `t`: a scaled non-central chi-squared with
/// `c = 2 theta / (sigma^2 (1 - e^{-theta t}))`, `4 theta mu / sigma^2`
/// degrees of freedom and non-centrality `2 c x0 e^{-theta t}`.
///
/// The density is evaluated through the Poisson-weighted central chi-squared
/// series, truncated adaptively once the remaining Poisson tail is below
/// 1e-14.
pub fn cir_exact_density(theta: f64, mu: f64, sigma: f64, x0: f64, t: f64) -> Result<OracleDensity> {
    if !(t > 0.0) {
        return Err(Error::Oracle(format!("time {t} must be positive")));
    }
    if 2.0 * theta * mu <= sigma * sigma {
        return Err(Error::Oracle(format!(
            "2 theta mu = {} must exceed sigma^2 = {}",
            2.0 * theta * mu,
            sigma * sigma
        )));
    }
    if x0 < 0.0 {
        return Err(Error::Oracle(format!("x0 = {x0} must be non-negative")));
    }
    let decay = (-theta * t).exp();
    let c = 2.0 * theta / (sigma * sigma * (1.0 - decay));
    let dof = 4.0 * theta * mu / (sigma * sigma);
    let noncentrality = 2.0 * c * x0 * decay;

    // Poisson weights over the mixing index, truncated at tail mass 1e-14.
    let half = noncentrality / 2.0;
    let mut weights = Vec::new();
    let mut log_w = -half; // log of the j = 0 weight
    let mut cumulative = 0.0;
    let mut j = 0usize;
    loop {
        let w = log_w.exp();
        weights.push(w);
        cumulative += w;
        if 1.0 - cumulative < 1e-14 && j as f64 > half {
            break;
        }
        j += 1;
        if j > 100_000 {
            return Err(Error::Oracle("chi-squared series failed to converge".into()));
        }
        log_w += half.ln() - (j as f64).ln();
        if half == 0.0 {
            break;
        }
    }

    let eval = move |x: f64| -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let y = 2.0 * c * x;
        let mut acc = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let nu = dof + 2.0 * j as f64;
            let log_pdf = (0.5 * nu - 1.0) * y.ln() - 0.5 * y
                - 0.5 * nu * 2.0f64.ln()
                - ln_gamma(0.5 * nu);
            acc += w * log_pdf.exp();
        }
        2.0 * c * acc
    };
    Ok(OracleDensity {
        eval: Box::new(eval),
        normalization: Normalization::Analytic,
    })
}

/// Mean of the square-root diffusion at time `t`.
pub fn cir_mean(theta: f64, mu: f64, x0: f64, t: f64) -> f64 {
    x0 * (-theta * t).exp() + mu * (1.0 - (-theta * t).exp())
}

/// Coefficients of the first-order frequency polynomial of the square-root
/// example: the first correction equals the order-zero state times
/// `a2 xi^2 + a3 xi^3 + a4 xi^4 + a5 xi^5`.
pub fn cir_first_order_coeffs(
    theta: f64,
    mu: f64,
    sigma: f64,
    t: f64,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let s2 = sigma * sigma;
    let a2 = Complex64::new(t * t * s2 * (8.0 * theta * mu + s2) / 16.0, 0.0);
    let a3 = Complex64::new(0.0, -t * t * s2 * s2 * (4.0 * mu + t * s2) / 16.0);
    let a4 = Complex64::new(-t * t * t * mu * s2 * s2 * s2 / 24.0, 0.0);
    let a5 = Complex64::new(0.0, t * t * t * t * mu * s2 * s2 * s2 * s2 / 64.0);
    (a2, a3, a4, a5)
}

/// Probabilists' Hermite polynomial values `He_0..=He_k` at `u`.
fn hermite_upto(k: usize, u: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(k + 1);
    h.push(1.0);
    if k >= 1 {
        h.push(u);
    }
    for n in 1..k {
        let next = u * h[n] - n as f64 * h[n - 1];
        h.push(next);
    }
    h
}

/// Analytic first-order density correction of the square-root example
/// (started at `x0 = mu`): derivatives of the order-zero Gaussian assembled
/// from [`cir_first_order_coeffs`]. The correction carries no mass.
pub fn cir_first_order_density(
    theta: f64,
    mu: f64,
    sigma: f64,
    t: f64,
    window: (f64, f64, usize),
) -> Result<DensityGrid> {
    if !(t >= 0.0) {
        return Err(Error::Oracle("time must be non-negative".into()));
    }
    let (z_min, z_max, points) = window;
    if !(z_max > z_min) || points < 2 {
        return Err(Error::Oracle("bad density window".into()));
    }
    let (a2, a3, a4, a5) = cir_first_order_coeffs(theta, mu, sigma, t);
    let var = mu * sigma * sigma * t;
    let dz = (z_max - z_min) / (points - 1) as f64;
    let mut values = vec![0.0; points];
    if var == 0.0 {
        return Ok(DensityGrid::from_values(z_min, z_max, values));
    }
    let inv_sqrt = var.powf(-0.5);
    for (i, slot) in values.iter_mut().enumerate() {
        let z = z_min + i as f64 * dz;
        let u = (z - mu) * inv_sqrt;
        let gauss = (-0.5 * u * u).exp() / (2.0 * PI * var).sqrt();
        let he = hermite_upto(5, u);
        // phi1 = (-a2 d^2 - i a3 d^3 + a4 d^4 + i a5 d^5) phi0 with
        // d^k phi0 = (-1)^k var^{-k/2} He_k(u) phi0.
        let i_unit = Complex64::new(0.0, 1.0);
        let total = -a2 * var.powi(-1) * he[2] + i_unit * a3 * var.powf(-1.5) * he[3]
            + a4 * var.powi(-2) * he[4]
            - i_unit * a5 * var.powf(-2.5) * he[5];
        debug_assert!(total.im.abs() <= 1e-12 * (1.0 + total.re.abs()));
        *slot = total.re * gauss;
    }
    Ok(DensityGrid::from_values(z_min, z_max, values))
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (1.0 + (-2.0 * a).exp()).ln() - 2.0f64.ln()
}

fn coth(x: f64) -> f64 {
    let e = (-2.0 * x).exp();
    (1.0 + e) / (1.0 - e)
}

/// `sinh(c s) / sinh(c t)` for `0 <= s <= t`, evaluated in a form that does
/// not overflow for large `c t`.
fn sinh_ratio(c: f64, s: f64, t: f64) -> f64 {
    let c = c.abs();
    ((c * (s - t)).exp()) * (1.0 - (-2.0 * c * s).exp()) / (1.0 - (-2.0 * c * t).exp())
}

/// Closed-form filtered density of the tanh-drift model
/// `dX = a sigma tanh(a X / sigma) dt + sigma dV`,
/// `dY = (h1 X + h2) dt + dW`, started at `X0 = 0`:
///
/// ```text
/// pi_t(z) ∝ cosh(a z / sigma)
///           exp(-(h1 / 2 sigma) coth(t h1 sigma) z^2
///               + [h1 I_t + h2 / (sigma sinh(t h1 sigma))
///                  - (h2 / sigma) coth(t h1 sigma)] z)
/// I_t = int_0^t sinh(s h1 sigma) / sinh(t h1 sigma) dY_s
/// ```
///
/// The stochastic integral uses left-point sums over the path increments, so
/// only increments of `Y` enter; the result is normalized numerically on the
/// requested window.
pub fn benes_exact_density(
    a: f64,
    sigma: f64,
    h1: f64,
    h2: f64,
    path: &ObservationPath,
    t: f64,
    window: (f64, f64),
) -> Result<OracleDensity> {
    if h1 == 0.0 {
        return Err(Error::Oracle("h1 must be nonzero for the closed form".into()));
    }
    if !(sigma > 0.0) || !(t > 0.0) {
        return Err(Error::Oracle("sigma and t must be positive".into()));
    }
    if path.obs_dim() != 1 {
        return Err(Error::Oracle("the closed form is one-dimensional".into()));
    }
    let times = path.times();
    let idx = times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
        .ok_or_else(|| Error::Oracle(format!("t = {t} is not on the path grid")))?;

    let c = h1 * sigma;
    let mut integral = 0.0;
    for (&s, dy) in times.iter().zip(path.increments()).take(idx) {
        integral += sinh_ratio(c, s, t) * dy[0];
    }
    let tau = (c * t).abs();
    let inv_sinh = 2.0 * (-tau).exp() / (1.0 - (-2.0 * tau).exp());
    // sinh is odd: a negative h1 flips the sign of both h2 terms.
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    let lin = h1 * integral + sign * h2 / sigma * inv_sinh - sign * (h2 / sigma) * coth(tau);
    let quad = -sign * h1 / (2.0 * sigma) * coth(tau);

    let log_unnormalized = move |z: f64| ln_cosh(a * z / sigma) + quad * z * z + lin * z;

    // Normalize on the window with a trapezoid refined until stable.
    let (z_min, z_max) = window;
    if !(z_max > z_min) {
        return Err(Error::Oracle("bad normalization window".into()));
    }
    let mut points = 2049usize;
    let mut prev = f64::NAN;
    let mut log_shift = 0.0;
    let mut norm = 0.0;
    for _ in 0..8 {
        let dz = (z_max - z_min) / (points - 1) as f64;
        let logs: Vec<f64> = (0..points)
            .map(|i| log_unnormalized(z_min + i as f64 * dz))
            .collect();
        log_shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = logs.iter().map(|&l| (l - log_shift).exp()).collect();
        norm = trapezoid(&vals, dz);
        if !prev.is_nan() && (norm - prev).abs() <= 1e-10 * norm {
            break;
        }
        prev = norm;
        points = points * 2 - 1;
    }
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Oracle("window normalization failed".into()));
    }

    let eval = move |z: f64| ((log_unnormalized(z) - log_shift).exp()) / norm;
    Ok(OracleDensity {
        eval: Box::new(eval),
        normalization: Normalization::NumericOnWindow,
    })
}

/// One record of the Kalman-Bucy trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanPoint {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
}

/// Kalman-Bucy filter for the scalar linear model
/// `dX = (A X + b) dt + sigma dV`, `dY = (h1 X + h2) dt + dW`: Euler
/// integration of the variance Riccati equation and the innovation-driven
/// mean equation on the path grid, left-point convention throughout.
#[allow(clippy::too_many_arguments)]
pub fn kalman_bucy(
    a_lin: f64,
    b_lin: f64,
    h1: f64,
    h2: f64,
    sigma: f64,
    mean0: f64,
    var0: f64,
    path: &ObservationPath,
) -> Result<Vec<KalmanPoint>> {
    if path.obs_dim() != 1 {
        return Err(Error::Oracle("Kalman-Bucy oracle is one-dimensional".into()));
    }
    let times = path.times();
    let mut mean = mean0;
    let mut var = var0;
    let mut out = Vec::with_capacity(times.len());
    out.push(KalmanPoint { t: 0.0, mean, var });
    for (k, w) in times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        let dy = path.increments()[k][0];
        let innovation = dy - (h1 * mean + h2) * dt;
        let new_mean = mean + (a_lin * mean + b_lin) * dt + var * h1 * innovation;
        let new_var = var + (2.0 * a_lin * var + sigma * sigma - h1 * h1 * var * var) * dt;
        mean = new_mean;
        var = new_var;
        out.push(KalmanPoint { t: w[1], mean, var });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialLaw, PerturbedModel};
    use crate::polyops::MultiPoly;
    use crate::simulate::simulate_paths;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(0.5), (PI.sqrt()).ln(), max_relative = 1e-12);
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(5.0), 24.0f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(ln_gamma(10.5), 1_133_278.388_947_653_7f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn chi_squared_marginal_normalizes_and_has_known_mean() {
        let (theta, mu, sigma, x0, t) = (0.1, 1.0, 0.15, 1.0, 3.0);
        let oracle = cir_exact_density(theta, mu, sigma, x0, t).unwrap();
        // Fine quadrature over effectively the whole support.
        let n = 200_001;
        let hi = 4.0;
        let dz = hi / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| oracle.eval(i as f64 * dz)).collect();
        let mass = trapezoid(&vals, dz);
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        let mean_vals: Vec<f64> = (0..n).map(|i| i as f64 * dz * vals[i]).collect();
        let mean = trapezoid(&mean_vals, dz);
        assert_relative_eq!(mean, cir_mean(theta, mu, x0, t), max_relative = 1e-7);
        assert_relative_eq!(mean, 1.0, max_relative = 1e-7);
    }

    #[test]
    fn chi_squared_guards() {
        assert!(cir_exact_density(0.1, 1.0, 0.5, 1.0, 3.0).is_err()); // Feller violated
        assert!(cir_exact_density(0.1, 1.0, 0.15, 1.0, 0.0).is_err());
    }

    #[test]
    fn first_order_coeffs_degenerate_and_reference_values() {
        let zero = Complex64::new(0.0, 0.0);
        let (a2, a3, a4, a5) = cir_first_order_coeffs(0.1, 1.0, 0.0, 3.0);
        assert_eq!((a2, a3, a4, a5), (zero, zero, zero, zero));
        let (a2, a3, a4, a5) = cir_first_order_coeffs(0.1, 1.0, 0.15, 0.0);
        assert_eq!((a2, a3, a4, a5), (zero, zero, zero, zero));

        let (a2, a3, a4, a5) = cir_first_order_coeffs(0.1, 1.0, 0.15, 3.0);
        // 9 * 0.0225 * 0.8225 / 16, evaluated by hand.
        assert_relative_eq!(a2.re, 0.010409765625, epsilon = 1e-15);
        assert_eq!(a2.im, 0.0);
        assert!(a3.re == 0.0 && a3.im < 0.0);
        assert!(a4.im == 0.0 && a4.re < 0.0);
        assert!(a5.re == 0.0 && a5.im > 0.0);
    }

    #[test]
    fn first_order_density_carries_no_mass_and_has_gaussian_parity() {
        // Window wide enough that the quintic-Hermite tails are negligible.
        let window = (-1.0, 3.0, 8001);
        let grid = cir_first_order_density(0.1, 1.0, 0.15, 3.0, window).unwrap();
        assert!(grid.mass.abs() < 1e-10, "mass {}", grid.mass);

        // With the odd-derivative coefficients removed the correction is even
        // about the mean.
        let (a2, _, a4, _) = cir_first_order_coeffs(0.1, 1.0, 0.15, 3.0);
        let var: f64 = 1.0 * 0.15 * 0.15 * 3.0;
        let even = |z: f64| {
            let u = (z - 1.0) / var.sqrt();
            let gauss = (-0.5 * u * u).exp() / (2.0 * PI * var).sqrt();
            let he = hermite_upto(4, u);
            (-a2.re / var * he[2] + a4.re / (var * var) * he[4]) * gauss
        };
        for &dz in &[0.1, 0.35, 0.7] {
            assert_relative_eq!(even(1.0 + dz), even(1.0 - dz), max_relative = 1e-12);
        }
    }

    fn linear_obs_model(h1: f64, h2: f64, sigma: f64) -> PerturbedModel {
        PerturbedModel::scalar(
            1.0,
            0.0,
            sigma,
            MultiPoly::zero(1),
            MultiPoly::zero(1),
            Some(MultiPoly::univariate_re(&[h2, h1])),
        )
        .unwrap()
    }

    #[test]
    fn benes_density_normalizes_on_window() {
        let model = linear_obs_model(0.8, 0.5, 0.5);
        let law = InitialLaw::dirac_scalar(0.0);
        let path = simulate_paths(&model, &law, 1.0, 1000, 3).unwrap();
        let oracle = benes_exact_density(0.8, 0.5, 0.8, 0.5, &path, 1.0, (-3.0, 3.0)).unwrap();
        assert_eq!(oracle.normalization, Normalization::NumericOnWindow);
        let grid = oracle.sample(-3.0, 3.0, 8001);
        assert!((grid.mass - 1.0).abs() < 1e-8, "mass {}", grid.mass);
    }

    #[test]
    fn benes_depends_only_on_increments() {
        let model = linear_obs_model(0.8, 0.5, 0.5);
        let law = InitialLaw::dirac_scalar(0.0);
        let path = simulate_paths(&model, &law, 1.0, 500, 11).unwrap();
        // Rebuild the path from cumulative values shifted by a constant;
        // differences are unchanged, so the density must be identical.
        let shifted = {
            let cumulative = path.cumulative();
            let increments: Vec<_> = cumulative
                .windows(2)
                .map(|w| {
                    let a = &w[0] + nalgebra::DVector::from_element(1, 5.0);
                    let b = &w[1] + nalgebra::DVector::from_element(1, 5.0);
                    b - a
                })
                .collect();
            ObservationPath::new(path.times().to_vec(), increments, None).unwrap()
        };
        let a = benes_exact_density(0.8, 0.5, 0.8, 0.5, &path, 1.0, (-3.0, 3.0)).unwrap();
        let b = benes_exact_density(0.8, 0.5, 0.8, 0.5, &shifted, 1.0, (-3.0, 3.0)).unwrap();
        for k in 0..60 {
            let z = -3.0 + 0.1 * k as f64;
            assert_relative_eq!(a.eval(z), b.eval(z), max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn benes_zero_drift_limit_matches_kalman_bucy() {
        // a = 0 makes the signal a driftless diffusion; the closed form
        // degenerates to a Gaussian whose moments the Kalman filter tracks.
        // The Euler iterates converge to it at first order in the step, so a
        // fine path grid brings the two within 1e-6.
        let (sigma, h1, h2) = (0.5, 0.8, 0.5);
        let model = linear_obs_model(h1, h2, sigma);
        let law = InitialLaw::dirac_scalar(0.0);
        let path = simulate_paths(&model, &law, 1.0, 100_000, 17).unwrap();

        let oracle = benes_exact_density(0.0, sigma, h1, h2, &path, 1.0, (-4.0, 4.0)).unwrap();
        let grid = oracle.sample(-4.0, 4.0, 64_001);
        let dz = grid.dz();
        let mean_vals: Vec<f64> = (0..grid.points())
            .map(|i| grid.z_at(i) * grid.values[i])
            .collect();
        let mean = trapezoid(&mean_vals, dz);
        let var_vals: Vec<f64> = (0..grid.points())
            .map(|i| (grid.z_at(i) - mean).powi(2) * grid.values[i])
            .collect();
        let var = trapezoid(&var_vals, dz);

        let kb = kalman_bucy(0.0, 0.0, h1, h2, sigma, 0.0, 0.0, &path).unwrap();
        let last = kb.last().unwrap();
        assert!((mean - last.mean).abs() <= 1e-6, "{mean} vs {}", last.mean);
        assert!((var - last.var).abs() <= 1e-6, "{var} vs {}", last.var);
        // The closed-form variance is the continuous Riccati solution.
        let exact_var = sigma / h1 * (sigma * h1 * 1.0f64).tanh();
        assert_relative_eq!(var, exact_var, max_relative = 1e-5);
    }

    #[test]
    fn kalman_bucy_closed_forms() {
        // No observation information: variance grows linearly, exactly, and
        // the mean never moves.
        let model = linear_obs_model(0.0, 0.0, 0.5);
        let law = InitialLaw::dirac_scalar(0.0);
        let path = simulate_paths(&model, &law, 2.0, 100, 23).unwrap();
        let kb = kalman_bucy(0.0, 0.0, 0.0, 0.0, 0.5, 0.3, 0.1, &path).unwrap();
        let last = kb.last().unwrap();
        assert_relative_eq!(last.var, 0.1 + 0.25 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(last.mean, 0.3, epsilon = 1e-12);

        // Stationary variance sigma / h1 for a driftless signal.
        let (sigma, h1) = (0.5, 1.0);
        let model = linear_obs_model(h1, 0.0, sigma);
        let path = simulate_paths(&model, &law, 6.0, 6000, 29).unwrap();
        let kb = kalman_bucy(0.0, 0.0, h1, 0.0, sigma, 0.0, 0.0, &path).unwrap();
        let last = kb.last().unwrap();
        assert!(
            (last.var - sigma / h1).abs() < 0.01 * (sigma / h1),
            "variance {} has not settled near {}",
            last.var,
            sigma / h1
        );
    }
}
