//! The perturbed signal/observation system and its generator symbols.
//!
//! The signal/observation pair is
//!
//! ```text
//! dX_t = (f_t + eps F(X_t)) dt + (nu_t + eps S(X_t)) dV_t + eps G(X_t) dW_t
//! dY_t = eps H(X_t) dt + dW_t
//! ```
//!
//! with deterministic `f_t`, `nu_t` and polynomial `F`, `S` (diffusion
//! perturbation), `G` (observation-noise coupling) and `H`. At `eps = 0` the
//! signal is a decoupled Gaussian process, which anchors the expansion.
//!
//! [`build_symbols`] assembles the frequency-space decomposition of the
//! generator into the scalar multiplier `a0` plus two operator descriptors
//! (the first- and second-order perturbation parts) and the observation
//! descriptor. A descriptor is a sum of terms, each a polynomial multiplier
//! in the frequency variable composed with a position polynomial realized as
//! the derivative operator `D = d/(i d xi)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::polyops::MultiPoly;

/// Deterministic time-dependent coefficient, piecewise constant on the solver
/// grid. `values[k]` applies on `[times[k], times[k+1])`; the last value
/// extends to infinity.
#[derive(Debug, Clone)]
pub enum TimeFunction<T> {
    Constant(T),
    Piecewise { times: Vec<f64>, values: Vec<T> },
}

impl<T> TimeFunction<T> {
    pub fn at(&self, t: f64) -> &T {
        match self {
            TimeFunction::Constant(v) => v,
            TimeFunction::Piecewise { times, values } => {
                let mut idx = 0;
                for (k, &tk) in times.iter().enumerate() {
                    if t >= tk {
                        idx = k;
                    } else {
                        break;
                    }
                }
                &values[idx]
            }
        }
    }

    /// Segment boundaries, for exact piecewise quadrature.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeFunction::Constant(_) => vec![0.0],
            TimeFunction::Piecewise { times, .. } => times.clone(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let TimeFunction::Piecewise { times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(Error::InvalidModel(format!(
                    "{what}: piecewise coefficient needs matching, non-empty times/values"
                )));
            }
            if times[0] != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "{what}: piecewise coefficient must start at t = 0"
                )));
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidModel(format!(
                    "{what}: piecewise breakpoints must be strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

/// The perturbed model. All polynomial entries are over `n` position
/// variables.
#[derive(Debug, Clone)]
pub struct PerturbedModel {
    /// Signal dimension.
    pub n: usize,
    /// Observation dimension (0 for purely unconditional problems).
    pub m: usize,
    /// Free-noise dimension.
    pub d: usize,
    /// Expansion parameter.
    pub eps: f64,
    /// Free drift `f_t` (length n).
    pub free_drift: TimeFunction<DVector<f64>>,
    /// Free diffusion `nu_t` (n x d); `nu nu^T` must be positive definite.
    pub free_diffusion: TimeFunction<DMatrix<f64>>,
    /// Drift perturbation `F` (length n).
    pub drift: Vec<MultiPoly>,
    /// Diffusion perturbation (n x d).
    pub diffusion: Vec<Vec<MultiPoly>>,
    /// Coupling of the signal to the observation noise (n x m).
    pub obs_coupling: Vec<Vec<MultiPoly>>,
    /// Observation function `H` (length m).
    pub observation: Vec<MultiPoly>,
}

impl PerturbedModel {
    /// Validate dimensions, positive definiteness of `nu nu^T` at every
    /// breakpoint, and `eps >= 0`.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidModel(
                "signal and free-noise dimensions must be positive".into(),
            ));
        }
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(Error::InvalidModel(format!(
                "eps must be finite and non-negative, got {}",
                self.eps
            )));
        }
        self.free_drift.validate("free drift")?;
        self.free_diffusion.validate("free diffusion")?;

        for &t in &self.free_drift.breakpoints() {
            let f = self.free_drift.at(t);
            if f.len() != self.n {
                return Err(Error::InvalidModel(format!(
                    "free drift has length {} at t = {t}, expected {}",
                    f.len(),
                    self.n
                )));
            }
        }
        for &t in &self.free_diffusion.breakpoints() {
            let nu = self.free_diffusion.at(t);
            if nu.nrows() != self.n || nu.ncols() != self.d {
                return Err(Error::InvalidModel(format!(
                    "free diffusion is {}x{} at t = {t}, expected {}x{}",
                    nu.nrows(),
                    nu.ncols(),
                    self.n,
                    self.d
                )));
            }
            let gram = nu * nu.transpose();
            if Cholesky::new(gram).is_none() {
                return Err(Error::InvalidModel(format!(
                    "nu nu^T is not positive definite at t = {t}"
                )));
            }
        }

        let check_vec = |polys: &[MultiPoly], len: usize, what: &str| -> Result<()> {
            if polys.len() != len {
                return Err(Error::InvalidModel(format!(
                    "{what} has {} entries, expected {len}",
                    polys.len()
                )));
            }
            for p in polys {
                if p.nvars() != self.n {
                    return Err(Error::InvalidModel(format!(
                        "{what} entry over {} variables, expected {}",
                        p.nvars(),
                        self.n
                    )));
                }
            }
            Ok(())
        };
        check_vec(&self.drift, self.n, "drift perturbation")?;
        check_vec(&self.observation, self.m, "observation function")?;
        if self.diffusion.len() != self.n {
            return Err(Error::InvalidModel("diffusion perturbation row count".into()));
        }
        for row in &self.diffusion {
            check_vec(row, self.d, "diffusion perturbation row")?;
        }
        if self.obs_coupling.len() != self.n {
            return Err(Error::InvalidModel("observation coupling row count".into()));
        }
        for row in &self.obs_coupling {
            check_vec(row, self.m, "observation coupling row")?;
        }
        Ok(())
    }

    /// Convenience constructor for the one-dimensional case used by both
    /// worked examples: scalar free coefficients, single noise source,
    /// optional scalar observation.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        eps: f64,
        free_drift: f64,
        free_diffusion: f64,
        drift: MultiPoly,
        diffusion: MultiPoly,
        observation: Option<MultiPoly>,
    ) -> Result<Self> {
        let m = usize::from(observation.is_some());
        let model = PerturbedModel {
            n: 1,
            m,
            d: 1,
            eps,
            free_drift: TimeFunction::Constant(DVector::from_element(1, free_drift)),
            free_diffusion: TimeFunction::Constant(DMatrix::from_element(1, 1, free_diffusion)),
            drift: vec![drift],
            diffusion: vec![vec![diffusion]],
            obs_coupling: vec![vec![MultiPoly::zero(1); m]],
            observation: observation.into_iter().collect(),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Initial law of the signal.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    /// Point mass at `x0` (the zero-covariance limit of the Gaussian law).
    Dirac { x0: DVector<f64> },
    /// Gaussian with mean `x0` and positive-definite covariance.
    Gaussian { x0: DVector<f64>, cov: DMatrix<f64> },
    /// Polynomial-corrected Gaussian: density `prefactor(z) * N(x0, cov)`,
    /// e.g. a truncated orthogonal-series approximation of a non-Gaussian
    /// initial distribution.
    GramCharlier {
        x0: DVector<f64>,
        cov: DMatrix<f64>,
        prefactor: MultiPoly,
    },
}

impl InitialLaw {
    pub fn dirac_scalar(x0: f64) -> Self {
        InitialLaw::Dirac {
            x0: DVector::from_element(1, x0),
        }
    }

    pub fn gaussian_scalar(x0: f64, var: f64) -> Self {
        InitialLaw::Gaussian {
            x0: DVector::from_element(1, x0),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac { x0 }
            | InitialLaw::Gaussian { x0, .. }
            | InitialLaw::GramCharlier { x0, .. } => x0.len(),
        }
    }

    /// Mean and covariance of the Gaussian base.
    pub fn base_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            InitialLaw::Dirac { x0 } => (x0.clone(), DMatrix::zeros(x0.len(), x0.len())),
            InitialLaw::Gaussian { x0, cov } | InitialLaw::GramCharlier { x0, cov, .. } => {
                (x0.clone(), cov.clone())
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::InvalidModel(format!(
                "initial law dimension {} does not match signal dimension {n}",
                self.dim()
            )));
        }
        match self {
            InitialLaw::Dirac { .. } => Ok(()),
            InitialLaw::Gaussian { cov, .. } => {
                if Cholesky::new(cov.clone()).is_none() {
                    return Err(Error::InvalidModel(
                        "Gaussian initial covariance must be positive definite".into(),
                    ));
                }
                Ok(())
            }
            InitialLaw::GramCharlier { cov, prefactor, .. } => {
                if Cholesky::new(cov.clone()).is_none() {
                    return Err(Error::InvalidModel(
                        "Gram-Charlier base covariance must be positive definite".into(),
                    ));
                }
                if prefactor.nvars() != n {
                    return Err(Error::InvalidModel(
                        "Gram-Charlier prefactor variable count".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Characteristic function of the initial law at frequency `xi`.
///
/// Dirac: `exp(i xi . x0)`. Gaussian: `exp(i xi . x0 - xi^T cov xi / 2)`.
/// Gram-Charlier: the prefactor acts as `D = d/(i d xi)` on the Gaussian
/// factor; the action is computed symbolically and then evaluated.
pub fn initial_cf(law: &InitialLaw, xi: &[f64]) -> Result<Complex64> {
    let n = law.dim();
    if xi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "frequency point of length {} for dimension {n}",
            xi.len()
        )));
    }
    let (x0, cov) = law.base_moments();
    let gauss = gaussian_cf(&x0, &cov, xi);
    match law {
        InitialLaw::Dirac { .. } | InitialLaw::Gaussian { .. } => Ok(gauss),
        InitialLaw::GramCharlier { prefactor, .. } => {
            let poly_xi = dxi_action_on_gaussian(prefactor, &MultiPoly::constant_re(n, 1.0), &x0, &cov)?;
            let xic: Vec<Complex64> = xi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            Ok(poly_xi.eval(&xic)? * gauss)
        }
    }
}

fn gaussian_cf(x0: &DVector<f64>, cov: &DMatrix<f64>, xi: &[f64]) -> Complex64 {
    let xiv = DVector::from_row_slice(xi);
    let phase = x0.dot(&xiv);
    let quad = (cov * &xiv).dot(&xiv);
    Complex64::new(-(0.5) * quad, phase).exp()
}

/// Symbolic action of `p(D)` on `prefactor(xi) * exp(i xi.x0 - xi^T S xi/2)`,
/// returning the polynomial `q` with `p(D)(prefactor * G) = q * G`.
///
/// Uses `D_j (Q G) = (-i dQ/dxi_j + (x0_j + i (S xi)_j) Q) G`, applied once
/// per derivative. This both evaluates Gram-Charlier characteristic functions
/// and serves as the exact counterpart of the grid realization of `D` for
/// Gaussian-form states.
pub fn dxi_action_on_gaussian(
    p: &MultiPoly,
    prefactor: &MultiPoly,
    x0: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<MultiPoly> {
    let n = p.nvars();
    if prefactor.nvars() != n || x0.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch(
            "dxi_action_on_gaussian inputs disagree on dimension".into(),
        ));
    }
    // shift_j(xi) = x0_j + i (S xi)_j, the log-derivative of G divided by i.
    let mut shifts = Vec::with_capacity(n);
    for j in 0..n {
        let mut s = MultiPoly::constant_re(n, x0[j]);
        for k in 0..n {
            let term = MultiPoly::var(n, k)?.scale(Complex64::new(0.0, cov[(j, k)]));
            s = s.add(&term)?;
        }
        shifts.push(s);
    }
    let apply_d = |q: &MultiPoly, j: usize| -> Result<MultiPoly> {
        let dq = q.partial(j)?.scale(Complex64::new(0.0, -1.0));
        dq.add(&q.mul(&shifts[j])?)
    };

    let mut out = MultiPoly::zero(n);
    for (exps, coeff) in p.terms() {
        let mut q = prefactor.clone();
        for (j, &e) in exps.iter().enumerate() {
            for _ in 0..e {
                q = apply_d(&q, j)?;
            }
        }
        out = out.add(&q.scale(coeff))?;
    }
    Ok(out)
}

/// One additive piece of a frequency-space operator: pointwise multiplication
/// by `xi_factor` composed with `dxi_poly` realized as the derivative
/// operator `D` (applied first).
#[derive(Debug, Clone)]
pub struct DescriptorTerm {
    /// Polynomial in the frequency variables, evaluated pointwise.
    pub xi_factor: MultiPoly,
    /// Polynomial in the position variables, realized as `D`.
    pub dxi_poly: MultiPoly,
}

/// A frequency-space operator as a sum of descriptor terms.
#[derive(Debug, Clone)]
pub struct OperatorDescriptor {
    pub terms: Vec<DescriptorTerm>,
    n: usize,
}

impl OperatorDescriptor {
    pub fn empty(n: usize) -> Self {
        Self { terms: Vec::new(), n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.terms.iter().all(|t| t.dxi_poly.is_zero() || t.xi_factor.is_zero())
    }

    /// Largest derivative order the descriptor requests.
    pub fn max_derivative_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.dxi_poly.degree()).max().unwrap_or(0)
    }

    fn push(&mut self, xi_factor: MultiPoly, dxi_poly: MultiPoly) {
        if !xi_factor.is_zero() && !dxi_poly.is_zero() {
            self.terms.push(DescriptorTerm { xi_factor, dxi_poly });
        }
    }
}

/// Frequency-space generator decomposition of a [`PerturbedModel`].
///
/// `a0` is the free-system multiplier; `order1`/`order2` are the first- and
/// second-order perturbation operators; `observation` holds one descriptor
/// per observation component, combining the observation function and the
/// noise coupling.
#[derive(Debug, Clone)]
pub struct OperatorSymbols {
    n: usize,
    free_drift: TimeFunction<DVector<f64>>,
    gram: TimeFunction<DMatrix<f64>>,
    order1: TimeFunction<OperatorDescriptor>,
    order2: OperatorDescriptor,
    observation: Vec<OperatorDescriptor>,
}

impl OperatorSymbols {
    /// The free multiplier `a0(t, xi) = i xi.f_t - xi^T (nu nu^T) xi / 2`.
    pub fn a0(&self, t: f64, xi: &[f64]) -> Complex64 {
        let f = self.free_drift.at(t);
        let g = self.gram.at(t);
        let xiv = DVector::from_row_slice(xi);
        let phase = f.dot(&xiv);
        let quad = (g * &xiv).dot(&xiv);
        Complex64::new(-0.5 * quad, phase)
    }

    /// First-order perturbation operator at time `t`.
    pub fn order1(&self, t: f64) -> &OperatorDescriptor {
        self.order1.at(t)
    }

    /// Second-order perturbation operator (time independent: it involves only
    /// the polynomial perturbations).
    pub fn order2(&self) -> &OperatorDescriptor {
        &self.order2
    }

    /// Observation descriptors, one per observation component.
    pub fn observation(&self) -> &[OperatorDescriptor] {
        &self.observation
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Assemble the generator symbols of a validated model.
///
/// The decomposition realized here is
///
/// ```text
/// order1 = i xi.F(D) - tr[xi xi^T nu S^T(D)]
/// order2 = -tr[xi xi^T (S(D) S^T(D) + G(D) G^T(D))] / 2
/// obs_k  = H_k(D) + i sum_j xi_j G_jk(D)
/// ```
///
/// where the symmetrized free/perturbed diffusion cross term collapses to a
/// single trace because `nu` is constant in space.
pub fn build_symbols(model: &PerturbedModel) -> Result<OperatorSymbols> {
    model.validate()?;
    let n = model.n;

    let order1_for = |nu: &DMatrix<f64>| -> Result<OperatorDescriptor> {
        let mut desc = OperatorDescriptor::empty(n);
        for k in 0..n {
            let xi_k = MultiPoly::var(n, k)?.scale(Complex64::new(0.0, 1.0));
            desc.push(xi_k, model.drift[k].clone());
        }
        for i in 0..n {
            for j in 0..n {
                let xi_ij = MultiPoly::var(n, i)?
                    .mul(&MultiPoly::var(n, j)?)?
                    .scale(Complex64::new(-1.0, 0.0));
                let mut cross = MultiPoly::zero(n);
                for l in 0..model.d {
                    cross = cross.add(&model.diffusion[j][l].scale(Complex64::new(nu[(i, l)], 0.0)))?;
                }
                desc.push(xi_ij, cross);
            }
        }
        Ok(desc)
    };

    let order1 = match &model.free_diffusion {
        TimeFunction::Constant(nu) => TimeFunction::Constant(order1_for(nu)?),
        TimeFunction::Piecewise { times, values } => {
            let descs: Result<Vec<_>> = values.iter().map(&order1_for).collect();
            TimeFunction::Piecewise {
                times: times.clone(),
                values: descs?,
            }
        }
    };

    let mut order2 = OperatorDescriptor::empty(n);
    for i in 0..n {
        for j in 0..n {
            let xi_ij = MultiPoly::var(n, i)?
                .mul(&MultiPoly::var(n, j)?)?
                .scale(Complex64::new(-0.5, 0.0));
            let mut quad = MultiPoly::zero(n);
            for l in 0..model.d {
                quad = quad.add(&model.diffusion[i][l].mul(&model.diffusion[j][l])?)?;
            }
            for l in 0..model.m {
                quad = quad.add(&model.obs_coupling[i][l].mul(&model.obs_coupling[j][l])?)?;
            }
            order2.push(xi_ij, quad);
        }
    }

    let mut observation = Vec::with_capacity(model.m);
    for k in 0..model.m {
        let mut desc = OperatorDescriptor::empty(n);
        desc.push(MultiPoly::constant_re(n, 1.0), model.observation[k].clone());
        for j in 0..n {
            let xi_j = MultiPoly::var(n, j)?.scale(Complex64::new(0.0, 1.0));
            desc.push(xi_j, model.obs_coupling[j][k].clone());
        }
        observation.push(desc);
    }

    let gram = match &model.free_diffusion {
        TimeFunction::Constant(nu) => TimeFunction::Constant(nu * nu.transpose()),
        TimeFunction::Piecewise { times, values } => TimeFunction::Piecewise {
            times: times.clone(),
            values: values.iter().map(|nu| nu * nu.transpose()).collect(),
        },
    };

    Ok(OperatorSymbols {
        n,
        free_drift: model.free_drift.clone(),
        gram,
        order1,
        order2,
        observation,
    })
}

/// Mean and covariance of the free (unperturbed) signal at time `t`:
/// `x_t = x0 + int f`, `S_t = S0 + int nu nu^T`, with exact piecewise
/// quadrature.
pub fn free_moments(
    model: &PerturbedModel,
    law: &InitialLaw,
    t: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if t < 0.0 {
        return Err(Error::InvalidConfig(format!("time {t} is negative")));
    }
    law.validate(model.n)?;
    let (mut mean, mut cov) = law.base_moments();

    let integrate_vec = |tf: &TimeFunction<DVector<f64>>, acc: &mut DVector<f64>| {
        let mut cuts = tf.breakpoints();
        cuts.retain(|&c| c < t);
        cuts.push(t);
        for w in cuts.windows(2) {
            *acc += tf.at(w[0]) * (w[1] - w[0]);
        }
        if cuts.len() == 1 {
            // t == 0: nothing to add.
        }
    };
    let integrate_gram = |tf: &TimeFunction<DMatrix<f64>>, acc: &mut DMatrix<f64>| {
        let mut cuts = tf.breakpoints();
        cuts.retain(|&c| c < t);
        cuts.push(t);
        for w in cuts.windows(2) {
            let nu = tf.at(w[0]);
            *acc += nu * nu.transpose() * (w[1] - w[0]);
        }
    };
    if t > 0.0 {
        integrate_vec(&model.free_drift, &mut mean);
        integrate_gram(&model.free_diffusion, &mut cov);
    }
    Ok((mean, cov))
}

/// Models of the two worked examples, exposed for presets and tests.
pub mod presets {
    use super::*;
    use crate::fit::{self, FitMethod, FitSpec, FitTarget, Parity};

    /// Square-root mean-reverting model as a perturbed system: free part is
    /// driftless with constant volatility `sigma sqrt(mu)`; the perturbation
    /// carries the mean reversion and the Taylor-expanded volatility
    /// correction `sigma R(x)`.
    pub fn cir(theta: f64, mu: f64, sigma: f64, eps: f64, taylor_degree: u32) -> Result<PerturbedModel> {
        if mu <= 0.0 || sigma <= 0.0 || theta <= 0.0 {
            return Err(Error::InvalidModel(
                "square-root model needs positive theta, mu, sigma".into(),
            ));
        }
        let drift = MultiPoly::univariate_re(&[theta * mu, -theta]);
        let r = fit::taylor_fit(&FitSpec {
            method: FitMethod::Taylor {
                center: mu,
                degree: taylor_degree,
            },
            target: FitTarget::SqrtVol { mu },
        })?;
        let diffusion = r.scale(num_complex::Complex64::new(sigma, 0.0));
        PerturbedModel::scalar(eps, 0.0, sigma * mu.sqrt(), drift, diffusion, None)
    }

    /// Tanh-drift filtering model with linear observation `h1 x + h2`. The
    /// drift polynomial comes from the supplied fit specification applied to
    /// `f(x) = a sigma tanh(a x / sigma)`.
    pub fn benes(
        a: f64,
        sigma: f64,
        h1: f64,
        h2: f64,
        eps: f64,
        drift_fit: &FitSpec,
    ) -> Result<PerturbedModel> {
        let drift = fit::fit(drift_fit)?;
        let obs = MultiPoly::univariate_re(&[h2, h1]);
        let _ = a;
        PerturbedModel::scalar(eps, 0.0, sigma, drift, MultiPoly::zero(1), Some(obs))
    }

    /// The fit specification used throughout the tanh-drift experiments:
    /// weighted least squares of an odd polynomial on `[-5 sigma, 5 sigma]`
    /// with step `0.2 sigma`.
    pub fn benes_drift_fit(a: f64, sigma: f64, weight_w: f64, degree: u32) -> FitSpec {
        FitSpec {
            method: FitMethod::WeightedLsm {
                x_lo: -5.0 * sigma,
                x_hi: 5.0 * sigma,
                step: 0.2 * sigma,
                degree,
                weight_w,
                weight_sigma: sigma,
                parity: Parity::Odd,
            },
            target: FitTarget::TanhDrift { a, sigma },
        }
    }
}
