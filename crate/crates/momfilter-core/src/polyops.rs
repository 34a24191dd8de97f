//! Sparse multivariate polynomials with complex coefficients.
//!
//! One representation serves both position-space coefficient functions (real
//! coefficients, stored with zero imaginary parts) and frequency-space
//! operator symbols, which pick up factors of `i`. Exponent multi-indices are
//! dense `Vec<u32>` tuples; the target problems have at most a handful of
//! variables.
//!
//! Terms are kept in canonical form: no stored coefficient has magnitude
//! below [`CANON_EPS`] and every multi-index has length `nvars`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Coefficients whose magnitude drops below this after arithmetic are
/// removed. Far below every tolerance used by the solvers, so pruning never
/// shows up in results; it only keeps term maps from accumulating noise.
pub const CANON_EPS: f64 = 1e-15;

/// Sparse multivariate polynomial over the complex numbers.
///
/// The zero polynomial has an empty term map and degree 0 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Complex64>,
}

impl MultiPoly {
    /// The zero polynomial in `nvars` variables.
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    /// A constant polynomial.
    pub fn constant(nvars: usize, value: Complex64) -> Self {
        let mut p = Self::zero(nvars);
        if value.norm() >= CANON_EPS {
            p.terms.insert(vec![0; nvars], value);
        }
        p
    }

    /// A real constant polynomial.
    pub fn constant_re(nvars: usize, value: f64) -> Self {
        Self::constant(nvars, Complex64::new(value, 0.0))
    }

    /// The monomial `x_var` (exponent 1, unit coefficient).
    pub fn var(nvars: usize, var: usize) -> Result<Self> {
        if var >= nvars {
            return Err(Error::DimensionMismatch(format!(
                "variable index {var} out of range for {nvars} variables"
            )));
        }
        let mut exps = vec![0u32; nvars];
        exps[var] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(exps, Complex64::new(1.0, 0.0));
        Ok(p)
    }

    /// Build from `(multi-index, coefficient)` pairs; repeated indices are
    /// accumulated and the result is canonicalized.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        let mut map: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
        for (exps, c) in terms {
            if exps.len() != nvars {
                return Err(Error::DimensionMismatch(format!(
                    "multi-index of length {} in a {}-variable polynomial",
                    exps.len(),
                    nvars
                )));
            }
            *map.entry(exps).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        map.retain(|_, c| c.norm() >= CANON_EPS);
        Ok(Self { nvars, terms: map })
    }

    /// Univariate polynomial from coefficients in increasing power order.
    pub fn univariate(coeffs: &[Complex64]) -> Self {
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| (vec![k as u32], c));
        Self::from_terms(1, terms).expect("univariate indices are always well-formed")
    }

    /// Univariate polynomial from real coefficients in increasing power order.
    pub fn univariate_re(coeffs: &[f64]) -> Self {
        let cs: Vec<Complex64> = coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        Self::univariate(&cs)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Max total degree over stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Iterate over `(multi-index, coefficient)` pairs in deterministic order.
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], Complex64)> {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    pub fn coefficient(&self, exps: &[u32]) -> Complex64 {
        self.terms
            .get(exps)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    fn check_same_vars(&self, other: &Self) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch(format!(
                "polynomials over {} and {} variables",
                self.nvars, other.nvars
            )));
        }
        Ok(())
    }

    /// Pointwise coefficient sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        let mut terms = self.terms.clone();
        for (e, c) in &other.terms {
            *terms.entry(e.clone()).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        terms.retain(|_, c| c.norm() >= CANON_EPS);
        Ok(Self {
            nvars: self.nvars,
            terms,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Convolution of coefficient maps.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        let mut terms: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exps: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *terms.entry(exps).or_insert(Complex64::new(0.0, 0.0)) += ca * cb;
            }
        }
        terms.retain(|_, c| c.norm() >= CANON_EPS);
        Ok(Self {
            nvars: self.nvars,
            terms,
        })
    }

    /// Multiply every coefficient by a scalar.
    pub fn scale(&self, factor: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            let v = c * factor;
            if v.norm() >= CANON_EPS {
                terms.insert(e.clone(), v);
            }
        }
        Self {
            nvars: self.nvars,
            terms,
        }
    }

    /// `self^k` by repeated multiplication.
    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant_re(self.nvars, 1.0);
        for _ in 0..k {
            acc = acc.mul(self).expect("pow preserves nvars");
        }
        acc
    }

    /// Evaluate at a complex point.
    pub fn eval(&self, point: &[Complex64]) -> Result<Complex64> {
        if point.len() != self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "evaluation point of length {} for {} variables",
                point.len(),
                self.nvars
            )));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (exps, c) in &self.terms {
            let mut term = *c;
            for (x, &e) in point.iter().zip(exps) {
                term *= x.powu(e);
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Evaluate at a real point.
    pub fn eval_re(&self, point: &[f64]) -> Result<Complex64> {
        let z: Vec<Complex64> = point.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.eval(&z)
    }

    /// Formal partial derivative with respect to variable `var`.
    pub fn partial(&self, var: usize) -> Result<Self> {
        if var >= self.nvars {
            return Err(Error::DimensionMismatch(format!(
                "derivative variable {var} out of range for {} variables",
                self.nvars
            )));
        }
        let mut terms: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
        for (exps, c) in &self.terms {
            let e = exps[var];
            if e == 0 {
                continue;
            }
            let mut lowered = exps.clone();
            lowered[var] = e - 1;
            let v = c * e as f64;
            if v.norm() >= CANON_EPS {
                *terms.entry(lowered).or_insert(Complex64::new(0.0, 0.0)) += v;
            }
        }
        Ok(Self {
            nvars: self.nvars,
            terms,
        })
    }

    /// Parse the line-per-term text form produced by [`fmt::Display`].
    ///
    /// Each non-empty line is `c * x1^a1 x2^a2 ...`; factors with zero
    /// exponent are omitted, `x2` abbreviates `x2^1`, and a bare coefficient
    /// denotes a constant term. Coefficients are plain floats or complex
    /// values written as `re+imi` (e.g. `1.5-0.25i`, `2i`). The literal `0`
    /// denotes the zero polynomial.
    pub fn parse(nvars: usize, text: &str) -> Result<Self> {
        let mut terms: Vec<(Vec<u32>, Complex64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (coeff_str, factors) = match line.split_once('*') {
                Some((c, f)) => (c.trim(), f.trim()),
                None => (line, ""),
            };
            let coeff = parse_complex(coeff_str).map_err(|e| {
                Error::Parse(format!("line {}: bad coefficient '{coeff_str}': {e}", lineno + 1))
            })?;
            let mut exps = vec![0u32; nvars];
            for factor in factors.split_whitespace() {
                let body = factor.strip_prefix('x').ok_or_else(|| {
                    Error::Parse(format!("line {}: expected x<k>[^p], got '{factor}'", lineno + 1))
                })?;
                let (idx_str, pow_str) = match body.split_once('^') {
                    Some((i, p)) => (i, p),
                    None => (body, "1"),
                };
                let idx: usize = idx_str.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad variable index in '{factor}'", lineno + 1))
                })?;
                let pow: u32 = pow_str.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad exponent in '{factor}'", lineno + 1))
                })?;
                if idx == 0 || idx > nvars {
                    return Err(Error::Parse(format!(
                        "line {}: variable x{idx} out of range 1..={nvars}",
                        lineno + 1
                    )));
                }
                exps[idx - 1] += pow;
            }
            terms.push((exps, coeff));
        }
        Self::from_terms(nvars, terms)
    }
}

impl fmt::Display for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (exps, c) in &self.terms {
            if !first {
                writeln!(f)?;
            }
            first = false;
            write!(f, "{}", format_complex(*c))?;
            let mut sep = " * ";
            for (k, &e) in exps.iter().enumerate() {
                if e == 1 {
                    write!(f, "{sep}x{}", k + 1)?;
                } else if e > 1 {
                    write!(f, "{sep}x{}^{}", k + 1, e)?;
                } else {
                    continue;
                }
                sep = " ";
            }
        }
        Ok(())
    }
}

fn format_complex(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.re == 0.0 {
        format!("{}i", c.im)
    } else if c.im < 0.0 {
        format!("{}{}i", c.re, c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

fn parse_complex(s: &str) -> std::result::Result<Complex64, String> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')').trim();
    if s.is_empty() {
        return Err("empty".into());
    }
    if let Ok(re) = s.parse::<f64>() {
        return Ok(Complex64::new(re, 0.0));
    }
    if let Some(body) = s.strip_suffix('i') {
        // Either a pure imaginary like "2i"/"-i" or a sum like "1.5-0.25i".
        // Split at the last +/- that is not part of an exponent and not the
        // leading sign.
        if body.is_empty() || body == "-" || body == "+" {
            let sign = if body == "-" { -1.0 } else { 1.0 };
            return Ok(Complex64::new(0.0, sign));
        }
        if let Ok(im) = body.parse::<f64>() {
            return Ok(Complex64::new(0.0, im));
        }
        let bytes = body.as_bytes();
        for pos in (1..bytes.len()).rev() {
            let ch = bytes[pos] as char;
            if (ch == '+' || ch == '-') && !matches!(bytes[pos - 1] as char, 'e' | 'E') {
                let re: f64 = body[..pos].parse().map_err(|_| "bad real part")?;
                let im_str = &body[pos..];
                let im: f64 = if im_str == "+" {
                    1.0
                } else if im_str == "-" {
                    -1.0
                } else {
                    im_str.parse().map_err(|_| "bad imaginary part")?
                };
                return Ok(Complex64::new(re, im));
            }
        }
        return Err("could not split real/imaginary parts".into());
    }
    Err("not a real or complex literal".into())
}
