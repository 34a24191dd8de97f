//! Momentum-space asymptotic expansion solvers for nonlinear stochastic
//! filtering.
//!
//! The library integrates the order-by-order recursion for the filtered
//! characteristic function of a perturbed signal/observation system on a
//! frequency grid, inverts the result to conditional densities, and ships
//! exact benchmark filters (non-central chi-squared marginals, the closed-form
//! tanh-drift filter, Kalman-Bucy) for validation.
//!
//! Module map:
//! - [`polyops`]: multivariate complex polynomials (coefficient functions and
//!   frequency-space operator symbols).
//! - [`model`]: the perturbed system, initial laws, and generator symbols.
//! - [`spectral`]: the frequency grid, finite-difference realization of the
//!   derivative operator, and density inversion.
//! - [`zakai`] / [`ks`]: the unnormalized and normalized expansion solvers,
//!   with the substepping driver.
//! - [`scheme`]: runtime registry of the interchangeable solver strategies.
//! - [`fit`]: Taylor and weighted least-squares polynomial approximation of
//!   nonlinear coefficients.
//! - [`simulate`]: sample-path generation and path file I/O.
//! - [`mod@reference`]: exact and closed-form oracles.

// `!(x > 0.0)`-style guards are used deliberately throughout: unlike
// `x <= 0.0` they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod ks;
pub mod model;
pub mod polyops;
pub mod reference;
pub mod scheme;
pub mod simulate;
pub mod spectral;
pub mod zakai;

pub use error::{Error, Result};
pub use model::{InitialLaw, OperatorDescriptor, OperatorSymbols, PerturbedModel};
pub use polyops::MultiPoly;
pub use scheme::{scheme_by_name, scheme_names, FilterScheme, SolveInput, SolveOutput};
pub use simulate::ObservationPath;
pub use spectral::{DensityGrid, SpectralState, XiGrid};
pub use zakai::{SolverConfig, StepDiagnostics};
