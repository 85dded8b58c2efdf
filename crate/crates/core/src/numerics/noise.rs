use super::RngState;
use crate::dataio::MultivariateSeries;
use crate::error::{Error, Result};

/// Perturbs each present reading with i.i.d. `N(0, sigma²)` noise. Draws are
/// taken in row-major order over present readings only.
pub fn add_gaussian_noise(
    series: &MultivariateSeries,
    sigma: f64,
    rng: &mut RngState,
) -> Result<MultivariateSeries> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(series.clone());
    }
    Ok(series.map_present(|_, _, v| v + rng.normal(0.0, sigma)))
}
