//! Experiment driver: reproduces the worked figure experiments end to end
//! from TOML configuration files and exposes the pieces (config schema,
//! metrics, presets) for the test suites.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod presets;

use thiserror::Error;

/// Driver-level errors, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::OracleMismatch(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<momfilter_core::Error> for CliError {
    fn from(e: momfilter_core::Error) -> Self {
        use momfilter_core::Error as E;
        match e {
            E::BlowUp { .. } | E::NonPositiveMass { .. } | E::ImaginaryResidual { .. } => {
                CliError::Numeric(e.to_string())
            }
            E::Io(msg) => CliError::Io(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUTPUT_ROOT_ENV: &str = "MOMFILTER_OUT";

/// Resolve an output directory: explicit flag wins, then the config value,
/// then the fallback name; relative paths land under `$MOMFILTER_OUT` (or the
/// working directory).
pub fn resolve_out_dir(
    flag: Option<&str>,
    configured: Option<&str>,
    fallback: &str,
) -> std::path::PathBuf {
    let chosen = flag
        .map(str::to_string)
        .or_else(|| configured.map(str::to_string))
        .unwrap_or_else(|| fallback.to_string());
    let path = std::path::PathBuf::from(&chosen);
    if path.is_absolute() {
        return path;
    }
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => std::path::Path::new(&root).join(path),
        _ => path,
    }
}
