//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid unusable: {0}")]
    BadGrid(String),

    #[error(
        "numerical blow-up at step {step} (t = {t:.6}), order {order}, mode {mode}: {detail}"
    )]
    BlowUp {
        step: usize,
        t: f64,
        order: usize,
        mode: usize,
        detail: String,
    },

    #[error(
        "density inversion left an imaginary residual of {residual:.3e} \
         against a peak of {peak:.3e}; the state has lost Hermitian symmetry"
    )]
    ImaginaryResidual { residual: f64, peak: f64 },

    #[error("density mass {mass:.6e} is not positive; the truncated expansion has broken down")]
    NonPositiveMass { mass: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("malformed observation path: {0}")]
    BadPath(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("oracle unavailable: {0}")]
    Oracle(String),

    #[error("unknown solver scheme '{0}'")]
    UnknownScheme(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
