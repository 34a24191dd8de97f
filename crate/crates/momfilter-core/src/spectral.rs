//! Frequency grid, derivative-operator stencils, and density inversion.
//!
//! States live on a uniform symmetric grid in the frequency variable. The
//! operator `D = d/(i d xi)` (multiplication by position under the
//! transform) is realized by finite differences: central stencils in the
//! interior, matching-order one-sided stencils at the boundary, applied once
//! per derivative. Stencil weights come from the Fornberg recurrence, so the
//! accuracy order is configurable; the default is second order.
//!
//! Densities are recovered by direct trapezoidal quadrature of the inverse
//! transform at each requested position sample. Mode counts are O(10^2) and
//! the zero frequency must sit exactly on the grid, so a radix transform
//! buys nothing here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{InitialLaw, OperatorDescriptor};
use crate::polyops::MultiPoly;

/// Largest admissible imaginary residual of an inverted density, relative to
/// the real peak. Anything above this signals lost Hermitian symmetry.
pub const IMAG_RESIDUAL_TOL: f64 = 1e-6;

/// Fornberg weights: coefficients of the `m`-th derivative at `x0` on the
/// nodes `xs` (exact for polynomials of degree `xs.len() - 1`).
pub fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0f64; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Uniform symmetric frequency grid spanning `[-xi_max, xi_max]` per axis.
///
/// The stored mode count is always odd so that zero frequency lies exactly on
/// the grid (mass and moment reads happen there); even requests are rounded
/// up during construction.
#[derive(Debug, Clone, PartialEq)]
pub struct XiGrid {
    n: usize,
    modes_per_dim: usize,
    xi_max: Vec<f64>,
    stencil_order: usize,
}

impl XiGrid {
    /// Grid with the same half-width on every axis. `modes` is rounded up to
    /// the next odd count.
    pub fn isotropic(n: usize, modes: usize, xi_max: f64) -> Result<Self> {
        Self::new(n, modes, vec![xi_max; n])
    }

    pub fn new(n: usize, modes: usize, xi_max: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadGrid("dimension must be positive".into()));
        }
        if xi_max.len() != n {
            return Err(Error::BadGrid(format!(
                "{} half-widths for dimension {n}",
                xi_max.len()
            )));
        }
        if xi_max.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::BadGrid("half-widths must be positive and finite".into()));
        }
        let modes_per_dim = if modes.is_multiple_of(2) { modes + 1 } else { modes };
        if modes_per_dim < 3 {
            return Err(Error::BadGrid(format!("{modes} modes per axis is too few")));
        }
        Ok(Self {
            n,
            modes_per_dim,
            xi_max,
            stencil_order: 2,
        })
    }

    /// Set the finite-difference accuracy order (even, at least 2).
    pub fn with_stencil_order(mut self, order: usize) -> Result<Self> {
        if order < 2 || !order.is_multiple_of(2) {
            return Err(Error::BadGrid(format!(
                "stencil order {order} must be even and at least 2"
            )));
        }
        if order + 1 > self.modes_per_dim {
            return Err(Error::BadGrid(format!(
                "stencil order {order} needs at least {} modes per axis",
                order + 1
            )));
        }
        self.stencil_order = order;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn modes_per_dim(&self) -> usize {
        self.modes_per_dim
    }

    pub fn stencil_order(&self) -> usize {
        self.stencil_order
    }

    pub fn xi_max(&self, axis: usize) -> f64 {
        self.xi_max[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.xi_max[axis] / (self.modes_per_dim - 1) as f64
    }

    /// Largest position value the difference stencils can represent along an
    /// axis, roughly `1 / spacing`.
    ///
    /// This is a stability bound, not just an accuracy one: the grid
    /// realization of a position polynomial evaluates it across the whole
    /// band, so a fitted polynomial that diverges beyond its fit interval
    /// amplifies grid-scale noise explosively once the band extends past
    /// that interval. Substepped runs, which re-differentiate the folded
    /// state every period, must keep the band inside the region where the
    /// model polynomials stay bounded; refining the grid makes them *less*
    /// stable.
    pub fn position_band(&self, axis: usize) -> f64 {
        1.0 / self.spacing(axis)
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.modes_per_dim.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of the zero-frequency point.
    pub fn zero_index(&self) -> usize {
        let mid = (self.modes_per_dim - 1) / 2;
        let mut idx = 0;
        for _ in 0..self.n {
            idx = idx * self.modes_per_dim + mid;
        }
        idx
    }

    /// Coordinates of the flat index `k` (row-major, axis 0 slowest).
    pub fn xi_at(&self, k: usize) -> Vec<f64> {
        let mut rem = k;
        let mut out = vec![0.0; self.n];
        for axis in (0..self.n).rev() {
            let c = rem % self.modes_per_dim;
            rem /= self.modes_per_dim;
            out[axis] = -self.xi_max[axis] + c as f64 * self.spacing(axis);
        }
        out
    }

    /// Flat index of the point mirrored through the origin.
    pub fn mirror_index(&self, k: usize) -> usize {
        let mut rem = k;
        let mut idx = 0;
        let mut scale = 1;
        for _ in 0..self.n {
            let c = rem % self.modes_per_dim;
            rem /= self.modes_per_dim;
            idx += (self.modes_per_dim - 1 - c) * scale;
            scale *= self.modes_per_dim;
        }
        idx
    }

    /// Half-width such that a Gaussian characteristic-function envelope with
    /// the given covariance has decayed below 1e-12 at the grid edge.
    pub fn half_width_for_covariance(cov: &nalgebra::DMatrix<f64>) -> Result<f64> {
        let eig = cov.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(Error::BadGrid(
                "covariance must be positive definite to size the grid".into(),
            ));
        }
        Ok((2.0 * 27.6 / min_eig).sqrt())
    }

    /// One derivative pass along `axis`: `(1/i) d/d xi` by finite
    /// differences of the configured order.
    fn dxi_pass(&self, input: &[Complex64], axis: usize) -> Vec<Complex64> {
        let m = self.modes_per_dim;
        let q = self.stencil_order; // window has q+1 nodes
        let h = self.spacing(axis);
        // weights[o][j]: derivative at offset o within a (q+1)-node window.
        let nodes: Vec<f64> = (0..=q).map(|j| j as f64).collect();
        let weights: Vec<Vec<f64>> = (0..=q)
            .map(|o| {
                fd_weights(o as f64, &nodes, 1)
                    .into_iter()
                    .map(|w| w / h)
                    .collect()
            })
            .collect();

        let stride: usize = self.modes_per_dim.pow((self.n - 1 - axis) as u32);
        let block = stride * m;
        let total = input.len();
        let mut out = vec![Complex64::new(0.0, 0.0); total];
        let minus_i = Complex64::new(0.0, -1.0);
        let half = q / 2;
        let mut base = 0;
        while base < total {
            for lane in 0..stride {
                for i in 0..m {
                    let w0 = i.saturating_sub(half).min(m - (q + 1));
                    let o = i - w0;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, &w) in weights[o].iter().enumerate() {
                        acc += w * input[base + lane + (w0 + j) * stride];
                    }
                    out[base + lane + i * stride] = minus_i * acc;
                }
            }
            base += block;
        }
        out
    }
}

/// Apply a position polynomial realized as the derivative operator `D` to a
/// grid array: repeated single-derivative passes per monomial, memoized
/// across shared prefixes.
pub fn apply_poly_as_dxi(
    input: &[Complex64],
    poly: &MultiPoly,
    grid: &XiGrid,
) -> Result<Vec<Complex64>> {
    if poly.nvars() != grid.dim() {
        return Err(Error::DimensionMismatch(
            "polynomial and grid dimension disagree".into(),
        ));
    }
    if input.len() != grid.len() {
        return Err(Error::DimensionMismatch(
            "state length does not match the grid".into(),
        ));
    }
    if poly.degree() as usize >= grid.modes_per_dim() {
        return Err(Error::BadGrid(format!(
            "derivative degree {} does not fit on {} modes",
            poly.degree(),
            grid.modes_per_dim()
        )));
    }

    let n = grid.dim();
    let mut memo: BTreeMap<Vec<u32>, Vec<Complex64>> = BTreeMap::new();
    memo.insert(vec![0u32; n], input.to_vec());

    // Multi-indices in increasing total degree so predecessors exist.
    let mut wanted: Vec<Vec<u32>> = poly.terms().map(|(e, _)| e.to_vec()).collect();
    wanted.sort_by_key(|e| e.iter().sum::<u32>());
    for alpha in &wanted {
        ensure_derivative(alpha, &mut memo, grid);
    }

    let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
    for (exps, coeff) in poly.terms() {
        let arr = &memo[exps];
        for (o, v) in out.iter_mut().zip(arr) {
            *o += coeff * v;
        }
    }
    Ok(out)
}

fn ensure_derivative(alpha: &[u32], memo: &mut BTreeMap<Vec<u32>, Vec<Complex64>>, grid: &XiGrid) {
    if memo.contains_key(alpha) {
        return;
    }
    let axis = alpha
        .iter()
        .position(|&e| e > 0)
        .expect("nonzero multi-index");
    let mut prev = alpha.to_vec();
    prev[axis] -= 1;
    ensure_derivative(&prev, memo, grid);
    let arr = grid.dxi_pass(&memo[&prev], axis);
    memo.insert(alpha.to_vec(), arr);
}

/// Apply an operator descriptor to a grid array: for each term, the position
/// polynomial acts as `D` and the frequency factor multiplies pointwise.
pub fn apply_descriptor(
    input: &[Complex64],
    desc: &OperatorDescriptor,
    grid: &XiGrid,
) -> Result<Vec<Complex64>> {
    if desc.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(
            "descriptor and grid dimension disagree".into(),
        ));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
    for term in &desc.terms {
        let acted = apply_poly_as_dxi(input, &term.dxi_poly, grid)?;
        for k in 0..out.len() {
            let xi = grid.xi_at(k);
            let xic: Vec<Complex64> = xi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let factor = term.xi_factor.eval(&xic)?;
            out[k] += factor * acted[k];
        }
    }
    Ok(out)
}

/// Max deviation from Hermitian symmetry (`u(-xi) = conj(u(xi))`), relative
/// to the array's peak magnitude.
pub fn hermitian_residual(arr: &[Complex64], grid: &XiGrid) -> f64 {
    let peak = arr.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for k in 0..arr.len() {
        let m = grid.mirror_index(k);
        if m < k {
            continue;
        }
        let r = (arr[k] - arr[m].conj()).norm();
        worst = worst.max(r);
    }
    worst / peak
}

/// Expansion-order stack of grid arrays at a common time.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub grid: XiGrid,
    /// `orders[j]` holds the j-th expansion order on the grid.
    pub orders: Vec<Vec<Complex64>>,
    pub t: f64,
}

impl SpectralState {
    /// Initial state: order 0 carries the initial characteristic function,
    /// higher orders start at zero.
    pub fn from_initial_law(grid: XiGrid, max_order: usize, law: &InitialLaw) -> Result<Self> {
        law.validate(grid.dim())?;
        let mut order0 = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (k, slot) in order0.iter_mut().enumerate() {
            *slot = crate::model::initial_cf(law, &grid.xi_at(k))?;
        }
        let mut orders = vec![order0];
        orders.resize(max_order + 1, vec![Complex64::new(0.0, 0.0); grid.len()]);
        Ok(Self {
            grid,
            orders,
            t: 0.0,
        })
    }

    pub fn max_order(&self) -> usize {
        self.orders.len() - 1
    }

    /// Weighted sum of the orders at zero frequency: the (unnormalized) total
    /// mass of the truncated expansion.
    pub fn mass(&self, eps: f64) -> Complex64 {
        let z = self.grid.zero_index();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut w = 1.0;
        for order in &self.orders {
            acc += w * order[z];
            w *= eps;
        }
        acc
    }

    /// Weighted sum of the orders per mode.
    pub fn combined(&self, eps: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        let mut w = 1.0;
        for order in &self.orders {
            for (o, v) in out.iter_mut().zip(order) {
                *o += w * v;
            }
            w *= eps;
        }
        out
    }

    /// Worst Hermitian-symmetry residual across the orders.
    pub fn symmetry_residual(&self) -> f64 {
        self.orders
            .iter()
            .map(|o| hermitian_residual(o, &self.grid))
            .fold(0.0, f64::max)
    }

    /// Write a one-dimensional snapshot as `xi,re_order0,im_order0,...`.
    pub fn write_snapshot_csv(&self, path: &Path) -> Result<()> {
        if self.grid.dim() != 1 {
            return Err(Error::BadGrid("snapshots are defined for one dimension".into()));
        }
        let mut out = String::from("xi");
        for j in 0..self.orders.len() {
            write!(out, ",re_order{j},im_order{j}").expect("string write");
        }
        out.push('\n');
        for k in 0..self.grid.len() {
            write!(out, "{}", self.grid.xi_at(k)[0]).expect("string write");
            for order in &self.orders {
                write!(out, ",{},{}", order[k].re, order[k].im).expect("string write");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Real density samples on a uniform window, with the pre-normalization mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub values: Vec<f64>,
    /// Trapezoidal integral of `values` over the window.
    pub mass: f64,
}

impl DensityGrid {
    pub fn from_values(z_min: f64, z_max: f64, values: Vec<f64>) -> Self {
        let mass = trapezoid(&values, (z_max - z_min) / (values.len() - 1) as f64);
        Self {
            z_min,
            z_max,
            values,
            mass,
        }
    }

    pub fn points(&self) -> usize {
        self.values.len()
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / (self.values.len() - 1) as f64
    }

    pub fn z_at(&self, i: usize) -> f64 {
        // Pin the last sample to z_max exactly so windows survive CSV round
        // trips bit-for-bit.
        if i + 1 == self.values.len() {
            self.z_max
        } else {
            self.z_min + i as f64 * self.dz()
        }
    }

    /// Divide by the signed mass so the window integral is one.
    pub fn normalized(&self) -> Result<DensityGrid> {
        if self.mass <= 0.0 {
            return Err(Error::NonPositiveMass { mass: self.mass });
        }
        let values: Vec<f64> = self.values.iter().map(|v| v / self.mass).collect();
        Ok(DensityGrid {
            z_min: self.z_min,
            z_max: self.z_max,
            values,
            mass: 1.0,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("z,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.z_at(i), v).expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<DensityGrid> {
        let text = std::fs::read_to_string(path)?;
        let mut zs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "z,value" {
                    return Err(Error::Parse(format!(
                        "{}: expected header 'z,value', got '{line}'",
                        path.display()
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let z: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad z", lineno + 1)))?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad value", lineno + 1)))?;
            zs.push(z);
            vs.push(v);
        }
        if zs.len() < 2 {
            return Err(Error::Parse("density file needs at least two rows".into()));
        }
        Ok(DensityGrid::from_values(zs[0], *zs.last().unwrap(), vs))
    }
}

pub fn trapezoid(values: &[f64], dz: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dz * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Invert the weighted expansion to a density on the requested window
/// (one-dimensional states).
///
/// The imaginary part of the quadrature must stay below
/// [`IMAG_RESIDUAL_TOL`] of the real peak, and the resulting mass must be
/// positive; both failures are reported, not patched over. Negative pointwise
/// values from a truncated expansion are returned as-is.
pub fn invert_to_density(
    state: &SpectralState,
    eps: f64,
    window: (f64, f64, usize),
) -> Result<DensityGrid> {
    if state.grid.dim() != 1 {
        return Err(Error::BadGrid(
            "density inversion is implemented for one-dimensional states".into(),
        ));
    }
    let (z_min, z_max, points) = window;
    if !(z_max > z_min) || points < 2 || !z_min.is_finite() || !z_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "bad inversion window [{z_min}, {z_max}] with {points} points"
        )));
    }
    if eps < 0.0 {
        return Err(Error::InvalidConfig(format!("eps = {eps} is negative")));
    }

    let rho = state.combined(eps);
    let m = state.grid.modes_per_dim();
    let dxi = state.grid.spacing(0);
    let xi0 = -state.grid.xi_max(0);
    let dz = (z_max - z_min) / (points - 1) as f64;
    let scale = dxi / (2.0 * std::f64::consts::PI);

    let mut values = vec![0.0f64; points];
    let mut max_im = 0.0f64;
    let mut max_re = 0.0f64;
    for (i, slot) in values.iter_mut().enumerate() {
        let z = if i + 1 == points { z_max } else { z_min + i as f64 * dz };
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &r) in rho.iter().enumerate() {
            let xi = xi0 + k as f64 * dxi;
            let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
            acc += w * Complex64::from_polar(1.0, -xi * z) * r;
        }
        acc *= scale;
        max_im = max_im.max(acc.im.abs());
        max_re = max_re.max(acc.re.abs());
        *slot = acc.re;
    }
    if max_im > IMAG_RESIDUAL_TOL * max_re {
        return Err(Error::ImaginaryResidual {
            residual: max_im,
            peak: max_re,
        });
    }
    let grid = DensityGrid::from_values(z_min, z_max, values);
    if grid.mass <= 0.0 {
        return Err(Error::NonPositiveMass { mass: grid.mass });
    }
    Ok(grid)
}

/// Apply `poly(D)` to the weighted expansion and read the zero-frequency
/// value. For a normalized state this is the conditional moment of the
/// polynomial.
pub fn moments_at_zero(state: &SpectralState, eps: f64, poly: &MultiPoly) -> Result<Complex64> {
    let rho = state.combined(eps);
    let acted = apply_poly_as_dxi(&rho, poly, &state.grid)?;
    Ok(acted[state.grid.zero_index()])
}

/// Conditional mean and variance of a one-dimensional state, normalized by
/// the zero-frequency mass.
pub fn mean_and_variance(state: &SpectralState, eps: f64) -> Result<(f64, f64)> {
    if state.grid.dim() != 1 {
        return Err(Error::BadGrid("moment extraction here is one-dimensional".into()));
    }
    let mass = state.mass(eps);
    if mass.norm() == 0.0 {
        return Err(Error::NonPositiveMass { mass: 0.0 });
    }
    let x = MultiPoly::var(1, 0)?;
    let m1 = (moments_at_zero(state, eps, &x)? / mass).re;
    let m2 = (moments_at_zero(state, eps, &x.pow(2))? / mass).re;
    Ok((m1, m2 - m1 * m1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DescriptorTerm, OperatorDescriptor};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn gaussian_cf_state(grid: XiGrid, mean: f64, var: f64) -> SpectralState {
        let order0: Vec<Complex64> = (0..grid.len())
            .map(|k| {
                let xi = grid.xi_at(k)[0];
                Complex64::new(-0.5 * var * xi * xi, mean * xi).exp()
            })
            .collect();
        SpectralState {
            grid,
            orders: vec![order0],
            t: 0.0,
        }
    }

    fn descriptor_mult_by_x() -> OperatorDescriptor {
        let mut d = OperatorDescriptor::empty(1);
        d.terms.push(DescriptorTerm {
            xi_factor: MultiPoly::constant_re(1, 1.0),
            dxi_poly: MultiPoly::var(1, 0).unwrap(),
        });
        d
    }

    #[test]
    fn fornberg_reproduces_known_stencils() {
        // Central second order first derivative on {-1, 0, 1}.
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 1);
        assert_relative_eq!(w[0], -0.5, epsilon = 1e-14);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(w[2], 0.5, epsilon = 1e-14);
        // One-sided second order at the left edge.
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert_relative_eq!(w[0], -1.5, epsilon = 1e-14);
        assert_relative_eq!(w[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(w[2], -0.5, epsilon = 1e-14);
        // Central fourth order.
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expected = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn grid_contains_zero_and_rounds_modes_up() {
        let g = XiGrid::isotropic(1, 128, 10.0).unwrap();
        assert_eq!(g.modes_per_dim(), 129);
        assert_eq!(g.xi_at(g.zero_index())[0], 0.0);
        let g2 = XiGrid::isotropic(2, 5, 3.0).unwrap();
        assert_eq!(g2.len(), 25);
        let z = g2.xi_at(g2.zero_index());
        assert_eq!(z, vec![0.0, 0.0]);
        // Mirror of the first point is the last point.
        assert_eq!(g2.mirror_index(0), 24);
    }

    #[test]
    fn identity_descriptor_is_identity() {
        let grid = XiGrid::isotropic(1, 33, 5.0).unwrap();
        let state = gaussian_cf_state(grid.clone(), 0.7, 0.3);
        let mut d = OperatorDescriptor::empty(1);
        d.terms.push(DescriptorTerm {
            xi_factor: MultiPoly::constant_re(1, 1.0),
            dxi_poly: MultiPoly::constant_re(1, 1.0),
        });
        let out = apply_descriptor(&state.orders[0], &d, &grid).unwrap();
        for (a, b) in out.iter().zip(&state.orders[0]) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn multiplication_by_x_on_plane_wave() {
        // D applied to exp(i xi x0) multiplies by x0, up to O(h^2).
        let x0 = 0.8;
        let grid = XiGrid::isotropic(1, 513, 6.0).unwrap();
        let wave: Vec<Complex64> = (0..grid.len())
            .map(|k| Complex64::from_polar(1.0, grid.xi_at(k)[0] * x0))
            .collect();
        let out = apply_descriptor(&wave, &descriptor_mult_by_x(), &grid).unwrap();
        let h = grid.spacing(0);
        // Skip the one-sided boundary rows; they carry a larger constant.
        let interior = 3..grid.len() - 3;
        for (k, (got, w)) in out.iter().zip(&wave).enumerate() {
            if !interior.contains(&k) {
                continue;
            }
            let expected = x0 * w;
            assert!(
                (got - expected).norm() < 2.0 * h * h,
                "mode {k}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn richardson_halving_spacing_cuts_error_by_at_least_3_5() {
        // Against the hand-computed action on a Gaussian-form state:
        // (mu - D) rho = -i S xi rho for rho = exp(i mu xi - S xi^2 / 2).
        let (mu, s) = (1.0, 0.18);
        let drift = MultiPoly::univariate_re(&[mu, -1.0]);
        let mut desc = OperatorDescriptor::empty(1);
        desc.terms.push(DescriptorTerm {
            xi_factor: MultiPoly::constant_re(1, 1.0),
            dxi_poly: drift,
        });
        let err_for = |modes: usize| -> f64 {
            let grid = XiGrid::isotropic(1, modes, 8.0).unwrap();
            let state = gaussian_cf_state(grid.clone(), mu, s);
            let out = apply_descriptor(&state.orders[0], &desc, &grid).unwrap();
            let mut worst = 0.0f64;
            for (k, got) in out.iter().enumerate().skip(4).take(grid.len() - 8) {
                let xi = grid.xi_at(k)[0];
                let expected = Complex64::new(0.0, -s * xi) * state.orders[0][k];
                worst = worst.max((got - expected).norm());
            }
            worst
        };
        let coarse = err_for(129);
        let fine = err_for(257);
        assert!(
            coarse / fine >= 3.5,
            "second-order convergence not observed: {coarse} / {fine}"
        );
    }

    #[test]
    fn descriptor_matches_symbolic_action_on_fine_grid() {
        // Full drift descriptor i xi theta (mu - D) acting on the Gaussian
        // characteristic function; exact action is theta S xi^2 rho.
        let (theta, mu, s) = (0.1, 1.0, 0.0675);
        let mut desc = OperatorDescriptor::empty(1);
        desc.terms.push(DescriptorTerm {
            xi_factor: MultiPoly::var(1, 0).unwrap().scale(c(0.0, theta)),
            dxi_poly: MultiPoly::univariate_re(&[mu, -1.0]),
        });
        let grid = XiGrid::isotropic(1, 16385, 20.0).unwrap();
        let state = gaussian_cf_state(grid.clone(), mu, s);
        let out = apply_descriptor(&state.orders[0], &desc, &grid).unwrap();
        for k in (8..grid.len() - 8).step_by(13) {
            let xi = grid.xi_at(k)[0];
            let expected = theta * s * xi * xi * state.orders[0][k];
            assert!(
                (out[k] - expected).norm() < 1e-6,
                "mode {k}: {:?} vs {expected}",
                out[k]
            );
        }
    }

    #[test]
    fn hermitian_symmetry_preserved_by_real_descriptors() {
        let grid = XiGrid::isotropic(1, 65, 7.0).unwrap();
        let state = gaussian_cf_state(grid.clone(), 0.9, 0.4);
        assert!(hermitian_residual(&state.orders[0], &grid) < 1e-15);
        let mut desc = OperatorDescriptor::empty(1);
        desc.terms.push(DescriptorTerm {
            xi_factor: MultiPoly::var(1, 0).unwrap().scale(c(0.0, 1.0)),
            dxi_poly: MultiPoly::univariate_re(&[0.3, -1.2, 0.0, 0.7]),
        });
        let out = apply_descriptor(&state.orders[0], &desc, &grid).unwrap();
        assert!(hermitian_residual(&out, &grid) < 1e-12);
    }

    #[test]
    fn gaussian_inversion_round_trip() {
        let mean = 1.0;
        let var = 0.0675;
        let density = |z: f64| {
            (-(z - mean) * (z - mean) / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        for (modes, tol) in [(256usize, 1e-8), (64, 1e-6)] {
            let grid = XiGrid::isotropic(1, modes, 60.0).unwrap();
            let state = gaussian_cf_state(grid, mean, var);
            let out = invert_to_density(&state, 0.0, (-0.5, 2.5, 301)).unwrap();
            let mut worst = 0.0f64;
            for (i, v) in out.values.iter().enumerate() {
                worst = worst.max((v - density(out.z_at(i))).abs());
            }
            assert!(worst <= tol, "{modes} modes: sup error {worst} > {tol}");
        }
    }

    #[test]
    fn eps_zero_keeps_only_order_zero() {
        let grid = XiGrid::isotropic(1, 65, 40.0).unwrap();
        let mut state = gaussian_cf_state(grid.clone(), 0.0, 0.5);
        // A wild order-1 array must be ignored at eps = 0.
        state
            .orders
            .push(vec![Complex64::new(3.0, -2.0); grid.len()]);
        let a = invert_to_density(&state, 0.0, (-3.0, 3.0, 161)).unwrap();
        state.orders.truncate(1);
        let b = invert_to_density(&state, 0.0, (-3.0, 3.0, 161)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn moments_match_analytics_and_mass_quadrature() {
        let (mean, var) = (1.0, 0.0675);
        let grid = XiGrid::isotropic(1, 257, 60.0).unwrap();
        let state = gaussian_cf_state(grid, mean, var);

        let one = MultiPoly::constant_re(1, 1.0);
        let mass0 = moments_at_zero(&state, 0.0, &one).unwrap();
        assert_relative_eq!(mass0.re, 1.0, epsilon = 1e-12);

        let (m, v) = mean_and_variance(&state, 0.0).unwrap();
        let h = state.grid.spacing(0);
        assert!((m - mean).abs() < h * h, "mean {m}");
        assert!((v - var).abs() < h * h, "variance {v}");

        let density = invert_to_density(&state, 0.0, (-1.0, 3.0, 801)).unwrap();
        assert_relative_eq!(density.mass, mass0.re, max_relative = 1e-6);
    }

    #[test]
    fn broken_symmetry_is_reported() {
        let grid = XiGrid::isotropic(1, 65, 40.0).unwrap();
        let mut state = gaussian_cf_state(grid.clone(), 0.0, 0.5);
        // Violate Hermitian symmetry on one side only.
        state.orders[0][3] += Complex64::new(0.0, 0.5);
        state.orders[0][4] += Complex64::new(0.4, 0.0);
        let err = invert_to_density(&state, 0.0, (-3.0, 3.0, 101)).unwrap_err();
        assert!(matches!(err, Error::ImaginaryResidual { .. }), "{err}");
    }

    #[test]
    fn negative_mass_is_reported() {
        let grid = XiGrid::isotropic(1, 65, 40.0).unwrap();
        let mut state = gaussian_cf_state(grid, 0.0, 0.5);
        for v in &mut state.orders[0] {
            *v = -*v;
        }
        let err = invert_to_density(&state, 0.0, (-3.0, 3.0, 101)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveMass { .. }), "{err}");
    }

    #[test]
    fn normalization_and_csv_round_trip() {
        let grid = XiGrid::isotropic(1, 129, 40.0).unwrap();
        let state = gaussian_cf_state(grid, 0.3, 0.2);
        let density = invert_to_density(&state, 0.0, (-2.0, 2.6, 231)).unwrap();
        let normalized = density.normalized().unwrap();
        assert_relative_eq!(
            trapezoid(&normalized.values, normalized.dz()),
            1.0,
            epsilon = 1e-6
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density.csv");
        density.write_csv(&path).unwrap();
        let back = DensityGrid::read_csv(&path).unwrap();
        assert_eq!(back.values, density.values);
        assert_eq!(back.z_min, density.z_min);
        assert_eq!(back.z_max, density.z_max);

        // State snapshots carry one re/im column pair per order.
        let snap = dir.path().join("state.csv");
        let mut state = gaussian_cf_state(XiGrid::isotropic(1, 9, 4.0).unwrap(), 0.0, 0.5);
        state.orders.push(vec![Complex64::new(0.0, 0.0); state.grid.len()]);
        state.write_snapshot_csv(&snap).unwrap();
        let text = std::fs::read_to_string(&snap).unwrap();
        assert!(text.starts_with("xi,re_order0,im_order0,re_order1,im_order1\n"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn stencil_that_does_not_fit_is_rejected() {
        let grid = XiGrid::isotropic(1, 5, 3.0).unwrap();
        let poly = MultiPoly::var(1, 0).unwrap().pow(7);
        let arr = vec![Complex64::new(1.0, 0.0); grid.len()];
        assert!(matches!(
            apply_poly_as_dxi(&arr, &poly, &grid),
            Err(Error::BadGrid(_))
        ));
        assert!(XiGrid::isotropic(1, 5, 3.0).unwrap().with_stencil_order(6).is_err());
    }

    #[test]
    fn two_dimensional_descriptor_application() {
        // Mixed derivative on a separable plane wave: D_x D_y exp(i(xi1 a + xi2 b))
        // = a b * wave.
        let (a, b) = (0.6, -0.4);
        let grid = XiGrid::isotropic(2, 129, 4.0).unwrap();
        let wave: Vec<Complex64> = (0..grid.len())
            .map(|k| {
                let xi = grid.xi_at(k);
                Complex64::from_polar(1.0, xi[0] * a + xi[1] * b)
            })
            .collect();
        let poly = MultiPoly::from_terms(2, [(vec![1, 1], c(1.0, 0.0))]).unwrap();
        let out = apply_poly_as_dxi(&wave, &poly, &grid).unwrap();
        let mid = grid.zero_index();
        let expected = a * b * wave[mid];
        assert!((out[mid] - expected).norm() < 1e-3);
    }
}
