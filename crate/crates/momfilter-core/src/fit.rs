//! Polynomial approximation of nonlinear model coefficients.
//!
//! Two methods: Taylor expansion about a point, and Gaussian-weighted least
//! squares on a sample grid with an optional parity constraint. The weighted
//! fit minimizes `sum_k g(x_k) (P(x_k) - f(x_k))^2` with
//! `g(x) = exp(-w x^2 / (2 sigma^2))`; larger `w` concentrates the fit near
//! the origin at the cost of the tails.
//!
//! The normal equations of a degree-11 basis are badly conditioned, so the
//! solve goes through an orthogonal factorization of the weighted design
//! matrix rather than the Gram matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::polyops::MultiPoly;

/// Which monomial powers are admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Any,
    Odd,
    Even,
}

impl Parity {
    fn admits(self, power: u32) -> bool {
        match self {
            Parity::Any => true,
            Parity::Odd => !power.is_multiple_of(2),
            Parity::Even => power.is_multiple_of(2),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FitMethod {
    Taylor {
        center: f64,
        degree: u32,
    },
    WeightedLsm {
        x_lo: f64,
        x_hi: f64,
        step: f64,
        degree: u32,
        weight_w: f64,
        /// Scale in the weight exponent; the model volatility in practice.
        weight_sigma: f64,
        parity: Parity,
    },
}

/// Scalar target function being approximated.
#[derive(Debug, Clone)]
pub enum FitTarget {
    /// `f(x) = a sigma tanh(a x / sigma)`.
    TanhDrift { a: f64, sigma: f64 },
    /// `f(x) = sqrt(x) - sqrt(mu)`, the volatility correction of the
    /// square-root model.
    SqrtVol { mu: f64 },
    /// An explicit univariate polynomial (exact derivatives; mostly for
    /// tests and synthetic targets).
    Poly(MultiPoly),
    /// Tabulated samples; supports the weighted least-squares method only.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl FitTarget {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            FitTarget::TanhDrift { a, sigma } => Ok(a * sigma * (a * x / sigma).tanh()),
            FitTarget::SqrtVol { mu } => {
                if x < 0.0 {
                    return Err(Error::Fit(format!(
                        "sqrt-vol target evaluated at negative x = {x}"
                    )));
                }
                Ok(x.sqrt() - mu.sqrt())
            }
            FitTarget::Poly(p) => Ok(p.eval_re(&[x])?.re),
            FitTarget::Table { .. } => Err(Error::Fit(
                "tabulated targets have no pointwise evaluator; use the table rows".into(),
            )),
        }
    }

    /// Analytic k-th derivative at `x`, when available.
    fn derivative(&self, k: u32, x: f64) -> Result<f64> {
        match self {
            FitTarget::TanhDrift { a, sigma } => {
                if k == 0 {
                    return self.eval(x);
                }
                // d^k/du^k tanh(u) = Q_k(tanh u) with Q_0 = T and
                // Q_{k+1} = (1 - T^2) Q_k'(T); chain rule brings (a/sigma)^k.
                let t_var = MultiPoly::var(1, 0).expect("one variable");
                let one_minus_t2 = MultiPoly::univariate_re(&[1.0, 0.0, -1.0]);
                let mut q = t_var;
                for _ in 0..k {
                    q = q.partial(0)?.mul(&one_minus_t2)?;
                }
                let t = (a * x / sigma).tanh();
                let inner = q.eval_re(&[t])?.re;
                Ok(a * sigma * (a / sigma).powi(k as i32) * inner)
            }
            FitTarget::SqrtVol { mu } => {
                if x <= 0.0 {
                    return Err(Error::Fit(
                        "sqrt-vol derivatives need a positive expansion point".into(),
                    ));
                }
                if k == 0 {
                    return self.eval(x);
                }
                let mut c = 1.0;
                for i in 0..k {
                    c *= 0.5 - i as f64;
                }
                let _ = mu;
                Ok(c * x.powf(0.5 - k as f64))
            }
            FitTarget::Poly(p) => {
                let mut d = p.clone();
                for _ in 0..k {
                    d = d.partial(0)?;
                }
                Ok(d.eval_re(&[x])?.re)
            }
            FitTarget::Table { .. } => Err(Error::Fit(
                "tabulated targets support weighted least squares only".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitSpec {
    pub method: FitMethod,
    pub target: FitTarget,
}

/// Dispatch on the configured method.
pub fn fit(spec: &FitSpec) -> Result<MultiPoly> {
    match spec.method {
        FitMethod::Taylor { .. } => taylor_fit(spec),
        FitMethod::WeightedLsm { .. } => lsm_fit(spec),
    }
}

/// Degree-d Taylor polynomial of the target about the configured center,
/// returned in the monomial basis.
pub fn taylor_fit(spec: &FitSpec) -> Result<MultiPoly> {
    let FitMethod::Taylor { center, degree } = spec.method else {
        return Err(Error::InvalidConfig("taylor_fit called with a non-Taylor spec".into()));
    };
    let shifted = MultiPoly::univariate_re(&[-center, 1.0]); // (x - c)
    let mut acc = MultiPoly::zero(1);
    let mut factorial = 1.0;
    for k in 0..=degree {
        if k > 0 {
            factorial *= k as f64;
        }
        let coeff = spec.target.derivative(k, center)? / factorial;
        acc = acc.add(&shifted.pow(k).scale(Complex64::new(coeff, 0.0)))?;
    }
    Ok(acc)
}

/// Sample abscissae of a weighted least-squares spec. Tabulated targets use
/// their own rows; the others sample `x_lo, x_lo + step, ..., x_hi`.
fn lsm_samples(spec: &FitSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let FitMethod::WeightedLsm { x_lo, x_hi, step, .. } = spec.method else {
        return Err(Error::InvalidConfig("lsm_fit called with a non-LSM spec".into()));
    };
    if let FitTarget::Table { xs, ys } = &spec.target {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Fit("table target needs matching, non-empty columns".into()));
        }
        return Ok((xs.clone(), ys.clone()));
    }
    if step <= 0.0 || x_hi <= x_lo {
        return Err(Error::Fit(format!(
            "bad sample grid [{x_lo}, {x_hi}] step {step}"
        )));
    }
    let count = ((x_hi - x_lo) / step + 1e-9).floor() as usize + 1;
    let xs: Vec<f64> = (0..count).map(|i| x_lo + i as f64 * step).collect();
    let ys: Result<Vec<f64>> = xs.iter().map(|&x| spec.target.eval(x)).collect();
    Ok((xs, ys?))
}

fn lsm_powers(degree: u32, parity: Parity) -> Vec<u32> {
    (0..=degree).filter(|&p| parity.admits(p)).collect()
}

/// Weighted least-squares polynomial fit.
pub fn lsm_fit(spec: &FitSpec) -> Result<MultiPoly> {
    let FitMethod::WeightedLsm {
        degree,
        weight_w,
        weight_sigma,
        parity,
        ..
    } = spec.method
    else {
        return Err(Error::InvalidConfig("lsm_fit called with a non-LSM spec".into()));
    };
    if weight_w < 0.0 {
        return Err(Error::Fit(format!("weight factor w = {weight_w} is negative")));
    }
    let (xs, ys) = lsm_samples(spec)?;
    let powers = lsm_powers(degree, parity);
    if xs.len() <= powers.len() {
        return Err(Error::Fit(format!(
            "{} samples cannot determine {} coefficients",
            xs.len(),
            powers.len()
        )));
    }

    let sqrt_weights: Vec<f64> = xs
        .iter()
        .map(|&x| weight(x, weight_w, weight_sigma).sqrt())
        .collect();
    let mut design = DMatrix::zeros(xs.len(), powers.len());
    let mut rhs = DVector::zeros(xs.len());
    for (i, (&x, &sw)) in xs.iter().zip(&sqrt_weights).enumerate() {
        for (j, &p) in powers.iter().enumerate() {
            design[(i, j)] = sw * x.powi(p as i32);
        }
        rhs[i] = sw * ys[i];
    }

    let qr = design.qr();
    let r = qr.r();
    let diag_max = (0..powers.len())
        .map(|j| r[(j, j)].abs())
        .fold(0.0_f64, f64::max);
    let diag_min = (0..powers.len())
        .map(|j| r[(j, j)].abs())
        .fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min < 1e-13 * diag_max {
        return Err(Error::Fit(format!(
            "rank-deficient design matrix (pivot ratio {:.3e})",
            diag_min / diag_max.max(f64::MIN_POSITIVE)
        )));
    }
    let qtb = qr.q().transpose() * rhs;
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Fit("triangular solve failed".into()))?;

    MultiPoly::from_terms(
        1,
        powers
            .iter()
            .zip(coeffs.iter())
            .map(|(&p, &c)| (vec![p], Complex64::new(c, 0.0))),
    )
}

/// The fit weight `g(x) = exp(-w x^2 / (2 sigma^2))`.
pub fn weight(x: f64, weight_w: f64, weight_sigma: f64) -> f64 {
    (-weight_w * x * x / (2.0 * weight_sigma * weight_sigma)).exp()
}

/// Weighted squared residual of a candidate polynomial against the
/// configured samples. Used by the optimality checks.
pub fn weighted_residual(spec: &FitSpec, poly: &MultiPoly) -> Result<f64> {
    let FitMethod::WeightedLsm {
        weight_w,
        weight_sigma,
        ..
    } = spec.method
    else {
        return Err(Error::InvalidConfig("weighted_residual needs an LSM spec".into()));
    };
    let (xs, ys) = lsm_samples(spec)?;
    let mut acc = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = poly.eval_re(&[x])?.re - y;
        acc += weight(x, weight_w, weight_sigma) * r * r;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lsm_spec(target: FitTarget, degree: u32, parity: Parity, w: f64, sigma: f64) -> FitSpec {
        FitSpec {
            method: FitMethod::WeightedLsm {
                x_lo: -5.0 * sigma,
                x_hi: 5.0 * sigma,
                step: 0.2 * sigma,
                degree,
                weight_w: w,
                weight_sigma: sigma,
                parity,
            },
            target,
        }
    }

    #[test]
    fn taylor_linear_is_exact() {
        let spec = FitSpec {
            method: FitMethod::Taylor { center: 0.7, degree: 1 },
            target: FitTarget::Poly(MultiPoly::univariate_re(&[2.0, -3.0])),
        };
        let p = taylor_fit(&spec).unwrap();
        assert_relative_eq!(p.coefficient(&[0]).re, 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.coefficient(&[1]).re, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn taylor_constant_target() {
        let spec = FitSpec {
            method: FitMethod::Taylor { center: -1.2, degree: 3 },
            target: FitTarget::Poly(MultiPoly::constant_re(1, 4.5)),
        };
        let p = taylor_fit(&spec).unwrap();
        assert_eq!(p, MultiPoly::constant_re(1, 4.5));
    }

    #[test]
    fn taylor_sqrt_vol_matches_hand_derivatives() {
        // d/dx sqrt(x) at 1: 1/2, -1/4/2!, 3/8/3! in shifted powers, i.e.
        // (x-1)/2 - (x-1)^2/8 + (x-1)^3/16, expanded by hand to the
        // monomial basis.
        let spec = FitSpec {
            method: FitMethod::Taylor { center: 1.0, degree: 3 },
            target: FitTarget::SqrtVol { mu: 1.0 },
        };
        let p = taylor_fit(&spec).unwrap();
        let expected = [-11.0 / 16.0, 15.0 / 16.0, -5.0 / 16.0, 1.0 / 16.0];
        for (k, &e) in expected.iter().enumerate() {
            assert_relative_eq!(p.coefficient(&[k as u32]).re, e, max_relative = 1e-13);
        }
    }

    #[test]
    fn tanh_derivatives_match_finite_differences() {
        let target = FitTarget::TanhDrift { a: 0.8, sigma: 0.5 };
        let h = 1e-5;
        for &x in &[0.0, 0.3, -0.9] {
            let d1 = target.derivative(1, x).unwrap();
            let fd = (target.eval(x + h).unwrap() - target.eval(x - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(d1, fd, max_relative = 1e-8, epsilon = 1e-10);
            let d2 = target.derivative(2, x).unwrap();
            let fd2 = (target.eval(x + h).unwrap() - 2.0 * target.eval(x).unwrap()
                + target.eval(x - h).unwrap())
                / (h * h);
            assert_relative_eq!(d2, fd2, max_relative = 1e-4, epsilon = 1e-5);
        }
        // Slope at the origin is a^2.
        assert_relative_eq!(target.derivative(1, 0.0).unwrap(), 0.64, epsilon = 1e-14);
    }

    #[test]
    fn lsm_recovers_polynomial_of_own_class() {
        let truth = MultiPoly::univariate_re(&[0.0, 1.5, 0.0, -0.25, 0.0, 0.01]);
        let spec = lsm_spec(FitTarget::Poly(truth.clone()), 5, Parity::Odd, 1.3, 0.5);
        let p = lsm_fit(&spec).unwrap();
        let res = weighted_residual(&spec, &p).unwrap();
        assert!(res < 1e-10, "residual {res}");
        for k in [1u32, 3, 5] {
            assert_relative_eq!(
                p.coefficient(&[k]).re,
                truth.coefficient(&[k]).re,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn lsm_parity_constraint_zeroes_even_powers() {
        let spec = lsm_spec(FitTarget::TanhDrift { a: 0.8, sigma: 0.5 }, 11, Parity::Odd, 2.0, 0.5);
        let p = lsm_fit(&spec).unwrap();
        for k in [0u32, 2, 4, 6, 8, 10] {
            assert_eq!(p.coefficient(&[k]), Complex64::new(0.0, 0.0));
        }
        assert!(p.degree() <= 11);
    }

    #[test]
    fn lsm_first_order_optimality() {
        let spec = lsm_spec(FitTarget::TanhDrift { a: 0.8, sigma: 0.5 }, 11, Parity::Odd, 2.0, 0.5);
        let p = lsm_fit(&spec).unwrap();
        let base = weighted_residual(&spec, &p).unwrap();
        for k in (1..=11).step_by(2) {
            for sign in [1.0, -1.0] {
                let bump = MultiPoly::from_terms(
                    1,
                    [(vec![k as u32], Complex64::new(sign * 1e-6, 0.0))],
                )
                .unwrap();
                let perturbed = p.add(&bump).unwrap();
                let res = weighted_residual(&spec, &perturbed).unwrap();
                assert!(
                    res >= base - 1e-15,
                    "perturbing x^{k} by {sign}e-6 lowered the residual: {res} < {base}"
                );
            }
        }
    }

    #[test]
    fn lsm_weight_sweep_sharpens_origin_slope() {
        // The target slope at the origin is a^2; heavier weighting toward the
        // origin must move the fitted slope monotonically onto it.
        let (a, sigma) = (0.8, 0.5);
        let mut gaps = Vec::new();
        for &w in &[0.0, 1.0, 2.0, 4.0] {
            let spec = lsm_spec(FitTarget::TanhDrift { a, sigma }, 11, Parity::Odd, w, sigma);
            let p = lsm_fit(&spec).unwrap();
            let slope = p.partial(0).unwrap().eval_re(&[0.0]).unwrap().re;
            gaps.push((slope - a * a).abs());
        }
        for pair in gaps.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "slope gap increased along the weight sweep: {gaps:?}"
            );
        }
    }

    #[test]
    fn lsm_is_reproducible() {
        let spec = lsm_spec(FitTarget::TanhDrift { a: 1.5, sigma: 0.5 }, 11, Parity::Odd, 2.0, 0.5);
        let p1 = lsm_fit(&spec).unwrap();
        let p2 = lsm_fit(&spec).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn lsm_rejects_underdetermined_and_degenerate_inputs() {
        let spec = FitSpec {
            method: FitMethod::WeightedLsm {
                x_lo: -1.0,
                x_hi: 1.0,
                step: 0.5,
                degree: 11,
                weight_w: 2.0,
                weight_sigma: 0.5,
                parity: Parity::Any,
            },
            target: FitTarget::TanhDrift { a: 0.8, sigma: 0.5 },
        };
        assert!(matches!(lsm_fit(&spec), Err(Error::Fit(_))));

        // Extreme weights underflow to zero rows and destroy the rank.
        let spec = lsm_spec(FitTarget::TanhDrift { a: 0.8, sigma: 0.5 }, 11, Parity::Odd, 4e4, 0.5);
        assert!(matches!(lsm_fit(&spec), Err(Error::Fit(_))));
    }

    #[test]
    fn table_target_uses_its_own_rows() {
        let xs: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x * x * x).collect();
        let spec = FitSpec {
            method: FitMethod::WeightedLsm {
                x_lo: 0.0,
                x_hi: 0.0,
                step: 0.0, // ignored for tables
                degree: 3,
                weight_w: 0.0,
                weight_sigma: 1.0,
                parity: Parity::Odd,
            },
            target: FitTarget::Table { xs, ys },
        };
        let p = lsm_fit(&spec).unwrap();
        assert_relative_eq!(p.coefficient(&[3]).re, 1.0, max_relative = 1e-10);
        assert!(p.coefficient(&[1]).re.abs() < 1e-10);
    }
}
