//! Committed experiment fixtures reproducing the worked figure setups. The
//! seeds are fixed, so rerunning a preset yields byte-identical artifacts.

use crate::config::ExperimentConfig;
use crate::CliError;

pub const PRESET_NAMES: &[&str] = &["fig1", "fig2", "fig3", "fig4", "fig5", "fig6"];

pub fn preset_toml(name: &str) -> Option<&'static str> {
    match name {
        "fig1" => Some(include_str!("../presets/fig1.toml")),
        "fig2" => Some(include_str!("../presets/fig2.toml")),
        "fig3" => Some(include_str!("../presets/fig3.toml")),
        "fig4" => Some(include_str!("../presets/fig4.toml")),
        "fig5" => Some(include_str!("../presets/fig5.toml")),
        "fig6" => Some(include_str!("../presets/fig6.toml")),
        _ => None,
    }
}

pub fn preset_config(name: &str) -> Result<ExperimentConfig, CliError> {
    let text = preset_toml(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset '{name}' (available: {})",
            PRESET_NAMES.join(", ")
        ))
    })?;
    ExperimentConfig::from_toml(text)
}
