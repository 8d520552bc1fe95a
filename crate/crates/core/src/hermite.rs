//! ReLU correlation function and its Hermite expansion.
//!
//! For `rho`-correlated standard Gaussians `g1, g2`,
//! `E[relu(g1) relu(g2)] = sqrt_h(rho) / 2`, with
//! `sqrt_h(rho) = (sqrt(1 - rho^2) + (pi - acos(rho)) rho) / pi`.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Correlations within this distance outside `[-1, 1]` are treated as
/// roundoff and clamped.
pub const RHO_CLAMP_TOL: f64 = 1e-12;

pub(crate) fn clamp_rho(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() > 1.0 + RHO_CLAMP_TOL {
        return Err(invalid(format!(
            "correlation {rho} lies outside [-1, 1]; inputs are probably not normalized"
        )));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// Closed form of the ReLU correlation function.
pub fn sqrt_h_closed(rho: f64) -> Result<f64> {
    let rho = clamp_rho(rho)?;
    Ok(sqrt_h_unchecked(rho))
}

#[inline]
pub(crate) fn sqrt_h_unchecked(rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    (((1.0 - rho * rho).max(0.0)).sqrt() + (PI - rho.acos()) * rho) / PI
}

/// `d sqrt_h / d rho = 1 - acos(rho) / pi`.
#[inline]
pub fn sqrt_h_derivative(rho: f64) -> f64 {
    1.0 - rho.clamp(-1.0, 1.0).acos() / PI
}

/// `h = sqrt_h^2`.
pub fn h(rho: f64) -> Result<f64> {
    Ok(sqrt_h_closed(rho)?.powi(2))
}

/// Partial sum of the Hermite series of `sqrt_h` through `ell = terms`.
///
/// Converges like `terms^{-3/2}` at `|rho| = 1`; the closed form is the
/// production path.
pub fn sqrt_h_series(rho: f64, terms: usize) -> f64 {
    let rho2 = rho * rho;
    // central = C(2l, l) / 4^l, updated as central *= (2l - 1) / (2l)
    let mut central = 1.0;
    let mut power = 1.0;
    let mut sum = 1.0 + 0.5 * PI * rho;
    for ell in 1..=terms {
        let l = ell as f64;
        central *= (2.0 * l - 1.0) / (2.0 * l);
        power *= rho2;
        sum += central * power / (2.0 * l - 1.0).powi(2);
    }
    sum / PI
}

/// Normalized Hermite coefficient `c_k = E[relu(z) He_k(z)] / sqrt(k!)`.
pub fn hermite_coeff_relu(k: usize) -> f64 {
    match k {
        0 => 1.0 / (2.0 * PI).sqrt(),
        1 => 0.5,
        k if k % 2 == 1 => 0.0,
        k => {
            let m = k / 2;
            let mut central = 1.0;
            for l in 1..=m {
                let l = l as f64;
                central *= (2.0 * l - 1.0) / (2.0 * l);
            }
            let denom = (2.0 * m as f64 - 1.0).powi(2);
            (central / (2.0 * PI * denom)).sqrt()
        }
    }
}

/// The first `count` ReLU Hermite coefficients.
pub fn hermite_coefficients_relu(count: usize) -> Vec<f64> {
    (0..count).map(hermite_coeff_relu).collect()
}
