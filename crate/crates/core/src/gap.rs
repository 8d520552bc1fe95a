//! How much plain truncated SVD loses against the `sqrt_h`-rescaled solution
//! on the same singular subspace, and sweeps over spherical weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{mask_correlations, LambdaMask};
use crate::error::{invalid, Result};
use crate::hermite::sqrt_h_unchecked;
use crate::linalg::{sample_gaussian_matrix, DenseMatrix, RngSeed};

/// Per-column correlations in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoVector {
    pub values: Vec<f64>,
}

impl RhoVector {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }
}

fn check_rank(w: &DenseMatrix, r: usize) -> Result<()> {
    if r == 0 || r > w.rows() {
        return Err(invalid(format!("rank {r} must lie in 1..={}", w.rows())));
    }
    Ok(())
}

/// Correlations kept by the top-`r` left singular subspace,
/// `||Sigma Lambda_top V_i|| / ||Sigma V_i||`. Zero columns get 0.
pub fn rho_svd(w: &DenseMatrix, r: usize) -> Result<RhoVector> {
    check_rank(w, r)?;
    let values = mask_correlations(w, &LambdaMask::top(r))?;
    Ok(RhoVector { values })
}

/// `(1/2d) sum_i ||W_i||^2 (sqrt_h(rho_i) - rho_i)^2` with the top-`r`
/// correlations: the exact risk advantage, divided by `d`, of rescaling the
/// truncated SVD columns to `||W_i|| sqrt_h(rho_i)`.
pub fn gap_lower_bound(w: &DenseMatrix, r: usize) -> Result<f64> {
    let rho = rho_svd(w, r)?;
    let total: f64 = rho
        .values
        .iter()
        .zip(w.column_norms())
        .map(|(&p, n)| n * n * (sqrt_h_unchecked(p) - p).powi(2))
        .sum();
    Ok(total / (2.0 * w.rows() as f64))
}

/// `d x m` matrix with columns uniform on the unit sphere.
pub fn sample_spherical_w(d: usize, m: usize, seed: RngSeed) -> DenseMatrix {
    let g = sample_gaussian_matrix(d, m, seed);
    let norms = g.column_norms();
    DenseMatrix::from_fn(d, m, |i, j| if norms[j] > 0.0 { g.get(i, j) / norms[j] } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub trial: usize,
    pub mean_rho: f64,
    pub max_rho: f64,
    pub gap_bound: f64,
}

/// Sweep grid: for each `n`, `d = round(dim_fraction n)`,
/// `m = round(width_coeff n^width_exponent)` and, per rank scale,
/// `r = max(1, round(scale d))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub rank_scales: Vec<f64>,
    pub dim_fraction: f64,
    pub width_exponent: f64,
    pub width_coeff: f64,
    pub trials: usize,
    pub seed: RngSeed,
}

impl SweepConfig {
    pub fn new(dims: Vec<usize>, rank_scales: Vec<f64>, trials: usize, seed: RngSeed) -> Self {
        Self {
            dims,
            rank_scales,
            dim_fraction: 0.2,
            width_exponent: 1.5,
            width_coeff: 1.0,
            trials,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.rank_scales.is_empty() {
            return Err(invalid("sweep needs at least one dimension and one rank scale"));
        }
        if self.trials == 0 {
            return Err(invalid("sweep needs at least one trial"));
        }
        for (name, v) in [
            ("dim fraction", self.dim_fraction),
            ("width exponent", self.width_exponent),
            ("width coefficient", self.width_coeff),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} {v} must be positive")));
            }
        }
        if let Some(s) = self.rank_scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(invalid(format!("rank scale {s} must be positive")));
        }
        Ok(())
    }

    /// `(d, m, r)` for a grid cell, `None` when infeasible.
    pub fn cell_shape(&self, n: usize, scale: f64) -> Option<(usize, usize, usize)> {
        let d = (self.dim_fraction * n as f64).round() as usize;
        let m = (self.width_coeff * (n as f64).powf(self.width_exponent)).round() as usize;
        let r = ((scale * d as f64).round() as usize).max(1);
        (d >= 2 && m >= d && r <= d).then_some((d, m, r))
    }
}

/// One row per feasible `(n, scale, trial)` cell, in that nesting order.
/// Each cell draws its weights from a seed derived from `(n, scale, trial)`,
/// so rows do not depend on execution order.
pub fn spherical_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &n in &cfg.dims {
        for &scale in &cfg.rank_scales {
            match cfg.cell_shape(n, scale) {
                Some((d, m, r)) => {
                    for trial in 0..cfg.trials {
                        cells.push((n, scale, d, m, r, trial));
                    }
                }
                None => log::warn!("skipping infeasible sweep cell n = {n}, scale = {scale}"),
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(n, scale, d, m, r, trial)| {
            let seed = cfg.seed.derive(&[n as u64, scale.to_bits(), trial as u64]);
            let w = sample_spherical_w(d, m, seed);
            let rho = rho_svd(&w, r)?;
            Ok(SweepRow {
                n,
                d,
                m,
                r,
                trial,
                mean_rho: rho.mean(),
                max_rho: rho.max(),
                gap_bound: gap_lower_bound(&w, r)?,
            })
        })
        .collect()
}

/// `d^{1/2} (1/pi - sqrt(r/d)/2)^2`, the growth rate of the gap for
/// spherical weights.
pub fn spherical_rate(d: usize, r: usize) -> f64 {
    let frac = r as f64 / d as f64;
    (d as f64).sqrt() * (std::f64::consts::FRAC_1_PI - 0.5 * frac.sqrt()).powi(2)
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
