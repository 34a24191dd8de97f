//! Density comparison metrics for the experiment reports.

use momfilter_core::spectral::{trapezoid, DensityGrid};

use crate::CliError;

/// Sup-norm gap, integrated absolute gap, and signed peak-height gap of two
/// densities on a common window.
pub fn diff_densities(a: &DensityGrid, b: &DensityGrid) -> Result<(f64, f64, f64), CliError> {
    if a.points() != b.points()
        || (a.z_min - b.z_min).abs() > 1e-12 * (1.0 + a.z_min.abs())
        || (a.z_max - b.z_max).abs() > 1e-12 * (1.0 + a.z_max.abs())
    {
        return Err(CliError::Config(format!(
            "density windows differ: [{}, {}] x {} vs [{}, {}] x {}",
            a.z_min,
            a.z_max,
            a.points(),
            b.z_min,
            b.z_max,
            b.points()
        )));
    }
    let gaps: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .collect();
    let linf = gaps.iter().cloned().fold(0.0, f64::max);
    let l1 = trapezoid(&gaps, a.dz());
    let peak_a = a.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak_b = b.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((linf, l1, peak_a - peak_b))
}

/// Count strict local maxima at least `height_fraction` of the global peak.
pub fn count_local_maxima(values: &[f64], height_fraction: f64) -> usize {
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = height_fraction * peak;
    values
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2] && w[1] >= floor)
        .count()
}

/// Mean and variance of a (normalized or not) density by quadrature.
pub fn density_moments(d: &DensityGrid) -> (f64, f64) {
    let dz = d.dz();
    let mass = d.mass;
    let mean_vals: Vec<f64> = (0..d.points()).map(|i| d.z_at(i) * d.values[i]).collect();
    let mean = trapezoid(&mean_vals, dz) / mass;
    let var_vals: Vec<f64> = (0..d.points())
        .map(|i| (d.z_at(i) - mean).powi(2) * d.values[i])
        .collect();
    let var = trapezoid(&var_vals, dz) / mass;
    (mean, var)
}
