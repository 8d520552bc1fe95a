//! Rank-`r` constructions: spectral initialization, kernel-PCA approximation
//! (NKP), ReLU SVD and layerwise function approximation by stochastic
//! gradient descent (LFAI).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{invalid, NlraError, Result};
use crate::hermite::sqrt_h_unchecked;
use crate::kernel::{kernel_matrix, KernelMatrix};
use crate::linalg::{check_rank_range, svd, sym_eig, DenseMatrix, RngSeed, SvdResult};
use crate::risk::{risk_mc, risk_mc_gradient, risk_relu_exact_value};

/// Low-rank factorization `Y = U V^T` with `U: d x r`, `V: m x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

impl FactorPair {
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{} factor columns", u.cols()),
                found: format!("{}", v.cols()),
            });
        }
        Ok(Self { u, v })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn product(&self) -> Result<DenseMatrix> {
        self.u.matmul_transpose(&self.v)
    }
}

/// `r` distinct singular directions out of `d`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LambdaMask {
    selected: Vec<usize>,
}

impl LambdaMask {
    pub fn new(mut selected: Vec<usize>, d: usize) -> Result<Self> {
        selected.sort_unstable();
        if selected.is_empty() {
            return Err(invalid("mask must select at least one direction"));
        }
        if selected.windows(2).any(|p| p[0] == p[1]) {
            return Err(invalid("mask indices must be distinct"));
        }
        if let Some(&bad) = selected.iter().find(|&&i| i >= d) {
            return Err(invalid(format!("mask index {bad} out of range for d = {d}")));
        }
        Ok(Self { selected })
    }

    pub fn top(r: usize) -> Self {
        Self {
            selected: (0..r).collect(),
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Spectral initialization: `U_r Sigma_r^{1/2}` and `V_r Sigma_r^{1/2}`.
pub fn spectral_init(w: &DenseMatrix, r: usize) -> Result<FactorPair> {
    check_rank_range(w, r)?;
    let dec = svd(w)?;
    let root: Vec<f64> = dec.singular_values[..r].iter().map(|s| s.sqrt()).collect();
    let u = DenseMatrix::from_fn(w.rows(), r, |i, j| dec.u.get(i, j) * root[j]);
    let v = DenseMatrix::from_fn(w.cols(), r, |i, j| dec.vt.get(j, i) * root[j]);
    FactorPair::new(u, v)
}

#[derive(Debug, Clone)]
pub struct NkpOutput {
    pub y: DenseMatrix,
    /// Top `r` kernel eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Eigen-gaps at or below this (relative to the top eigenvalue) leave the
/// rank-`r` subspace ill-defined.
pub const EIGEN_GAP_TOL: f64 = 1e-12;

/// Kernel-PCA approximation `Y = W V_K V_K^T`, `V_K` the top-`r`
/// eigenvectors of the nonlinearity kernel of `W`.
pub fn nkp(w: &DenseMatrix, r: usize, act: Activation) -> Result<NkpOutput> {
    let c1 = act.c1();
    if c1 <= 0.0 {
        return Err(NlraError::UnsupportedActivation {
            name: act.name(),
            c1,
        });
    }
    let kernel = kernel_matrix(w, act)?;
    nkp_with_kernel(w, &kernel, r)
}

/// NKP with a supplied (e.g. estimated) kernel matrix.
pub fn nkp_with_kernel(w: &DenseMatrix, kernel: &KernelMatrix, r: usize) -> Result<NkpOutput> {
    let m = w.cols();
    if kernel.size() != m {
        return Err(NlraError::ShapeMismatch {
            expected: format!("{m}x{m} kernel"),
            found: format!("{0}x{0}", kernel.size()),
        });
    }
    if r == 0 || r > m {
        return Err(invalid(format!("rank {r} must lie in 1..={m}")));
    }
    let (values, vectors) = sym_eig(kernel.as_matrix())?;
    let mut warnings = Vec::new();
    if r < m {
        let gap = values[r - 1] - values[r];
        if gap <= EIGEN_GAP_TOL * values[0].abs().max(1.0) {
            let msg = format!(
                "kernel eigen-gap lambda_{r} - lambda_{} = {gap:e} is numerically zero; the rank-{r} subspace is not unique",
                r + 1
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let top = vectors.leading_columns(r);
    let y = w.matmul(&top)?.matmul_transpose(&top)?;
    Ok(NkpOutput {
        y,
        eigenvalues: values[..r].to_vec(),
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ReluSvdOutput {
    pub y: DenseMatrix,
    pub mask: LambdaMask,
    pub rho: Vec<f64>,
}

pub const DEFAULT_SUBSET_CAP: u128 = 10_000_000;

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Column coordinates of `W` in its left singular basis, squared:
/// `sq[j][i] = (sigma_j V_ij)^2`.
struct SingularCoordinates {
    dec: SvdResult,
    coords: DenseMatrix,
    total: Vec<f64>,
    col_norms: Vec<f64>,
}

impl SingularCoordinates {
    fn new(w: &DenseMatrix) -> Result<Self> {
        let dec = svd(w)?;
        let (k, m) = (dec.rank(), w.cols());
        let coords = DenseMatrix::from_fn(k, m, |j, i| dec.singular_values[j] * dec.vt.get(j, i));
        let total = (0..m)
            .map(|i| (0..k).map(|j| coords.get(j, i).powi(2)).sum())
            .collect();
        Ok(Self {
            dec,
            coords,
            total,
            col_norms: w.column_norms(),
        })
    }

    fn rank(&self) -> usize {
        self.dec.rank()
    }

    /// Correlations `||Sigma Lambda V_i|| / ||Sigma V_i||`.
    fn correlations(&self, mask: &[usize]) -> Vec<f64> {
        let k = self.rank();
        (0..self.total.len())
            .map(|i| {
                if self.total[i] == 0.0 {
                    return 0.0;
                }
                let kept: f64 = mask
                    .iter()
                    .filter(|&&j| j < k)
                    .map(|&j| self.coords.get(j, i).powi(2))
                    .sum();
                (kept / self.total[i]).sqrt().clamp(0.0, 1.0)
            })
            .collect()
    }

    fn score(&self, mask: &[usize]) -> f64 {
        self.correlations(mask)
            .iter()
            .zip(&self.col_norms)
            .map(|(&rho, &n)| n * n * sqrt_h_unchecked(rho).powi(2))
            .sum()
    }
}

/// Per-column correlations `rho_i` retained by a mask.
pub(crate) fn mask_correlations(w: &DenseMatrix, mask: &LambdaMask) -> Result<Vec<f64>> {
    check_mask(w, mask)?;
    Ok(SingularCoordinates::new(w)?.correlations(mask.selected()))
}

/// Objective maximized over masks: `sum_i ||W_i||^2 h(rho_i(mask))`.
pub fn relu_svd_score(w: &DenseMatrix, mask: &LambdaMask) -> Result<f64> {
    check_mask(w, mask)?;
    Ok(SingularCoordinates::new(w)?.score(mask.selected()))
}

fn check_mask(w: &DenseMatrix, mask: &LambdaMask) -> Result<()> {
    if let Some(&bad) = mask.selected().iter().find(|&&i| i >= w.rows()) {
        return Err(invalid(format!("mask index {bad} out of range for d = {}", w.rows())));
    }
    Ok(())
}

/// The sqrt_h-rescaled solution for a fixed mask: column `i` points along the
/// projection of `W_i` onto the selected left singular vectors and has norm
/// `||W_i|| sqrt_h(rho_i)`.
///
/// A column with zero projection gets `rho_i = 0`, norm `||W_i|| / pi` and the
/// selected singular vector of largest singular value as its direction.
pub fn relu_svd_with_mask(w: &DenseMatrix, mask: &LambdaMask) -> Result<ReluSvdOutput> {
    check_mask(w, mask)?;
    let sc = SingularCoordinates::new(w)?;
    Ok(construct(w, &sc, mask.clone()))
}

fn construct(w: &DenseMatrix, sc: &SingularCoordinates, mask: LambdaMask) -> ReluSvdOutput {
    let (d, m) = w.shape();
    let k = sc.rank();
    let active: Vec<usize> = mask.selected().iter().copied().filter(|&j| j < k).collect();
    let rho = sc.correlations(&active);
    let mut y = DenseMatrix::zeros(d, m);
    for i in 0..m {
        let wn = sc.col_norms[i];
        if wn == 0.0 || active.is_empty() {
            continue;
        }
        let proj: Vec<f64> = active.iter().map(|&j| sc.coords.get(j, i)).collect();
        let pn = proj.iter().map(|p| p * p).sum::<f64>().sqrt();
        let beta = wn * sqrt_h_unchecked(rho[i]);
        if rho[i] == 0.0 || pn <= 1e-15 * sc.total[i].sqrt() {
            let lead = active[0];
            for r in 0..d {
                y.set(r, i, sc.dec.u.get(r, lead) * wn / PI);
            }
            continue;
        }
        for r in 0..d {
            let dir: f64 = active
                .iter()
                .zip(&proj)
                .map(|(&j, &p)| sc.dec.u.get(r, j) * p)
                .sum::<f64>()
                / pn;
            y.set(r, i, dir * beta);
        }
    }
    let rho = rho
        .into_iter()
        .zip(&sc.col_norms)
        .map(|(r, &n)| if n == 0.0 { 0.0 } else { r })
        .collect();
    ReluSvdOutput { y, mask, rho }
}

/// Advance `combo` to the next `r`-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let r = combo.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        if combo[i] < n - r + i {
            combo[i] += 1;
            for j in (i + 1)..r {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// ReLU SVD: enumerate every `r`-subset of singular directions, keep the one
/// maximizing [`relu_svd_score`] (first in lexicographic order among ties)
/// and return its sqrt_h-rescaled solution.
pub fn relu_svd(w: &DenseMatrix, r: usize, subset_cap: u128) -> Result<ReluSvdOutput> {
    let d = w.rows();
    if r == 0 || r > d {
        return Err(invalid(format!("rank {r} must lie in 1..={d}")));
    }
    let sc = SingularCoordinates::new(w)?;
    let k = sc.rank();
    if r >= k {
        return Ok(construct(w, &sc, LambdaMask::top(r)));
    }
    let count = binomial(k, r);
    if count > subset_cap {
        return Err(NlraError::CombinatorialBudget {
            d: k,
            r,
            count,
            cap: subset_cap,
        });
    }
    let m = w.cols();
    let weights: Vec<f64> = sc.col_norms.iter().map(|n| n * n).collect();
    let sq = DenseMatrix::from_fn(k, m, |j, i| sc.coords.get(j, i).powi(2));
    let score_of = |combo: &[usize], kept: &mut [f64]| -> f64 {
        kept.iter_mut().for_each(|v| *v = 0.0);
        for &j in combo {
            for (acc, &s) in kept.iter_mut().zip(sq.row(j)) {
                *acc += s;
            }
        }
        (0..m)
            .map(|i| {
                if sc.total[i] == 0.0 {
                    return 0.0;
                }
                let rho = (kept[i] / sc.total[i]).sqrt().clamp(0.0, 1.0);
                weights[i] * sqrt_h_unchecked(rho).powi(2)
            })
            .sum()
    };
    // one independent lexicographic scan per leading index; merging in index
    // order with a strict comparison keeps the lexicographically first maximum
    let per_lead: Vec<(f64, Vec<usize>)> = (0..=(k - r))
        .into_par_iter()
        .map(|lead| {
            let mut kept = vec![0.0; m];
            let mut combo: Vec<usize> = (lead..lead + r).collect();
            let mut best = (score_of(&combo, &mut kept), combo.clone());
            loop {
                if !next_combination(&mut combo, k) || combo[0] != lead {
                    break;
                }
                let s = score_of(&combo, &mut kept);
                if s > best.0 {
                    best = (s, combo.clone());
                }
            }
            best
        })
        .collect();
    let mut best = per_lead[0].clone();
    for cand in per_lead.into_iter().skip(1) {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    let mask = LambdaMask::new(best.1, d)?;
    Ok(construct(w, &sc, mask))
}

/// Options for [`lfai`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LfaiOptions {
    pub step_size: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optimizer steps between evaluations; inputs are streamed, so an epoch
    /// is a fixed number of fresh batches.
    pub steps_per_epoch: usize,
    pub rel_tol: f64,
    pub warm_start: bool,
    /// Samples for the evaluation risk of non-ReLU activations (ReLU uses the
    /// exact risk).
    pub eval_samples: usize,
    pub seed: RngSeed,
}

impl Default for LfaiOptions {
    fn default() -> Self {
        Self {
            step_size: 5e-3,
            batch_size: 512,
            max_epochs: 6,
            steps_per_epoch: 250,
            rel_tol: 1e-8,
            warm_start: true,
            eval_samples: 8192,
            seed: RngSeed(0),
        }
    }
}

impl LfaiOptions {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step size {} must be positive", self.step_size)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.steps_per_epoch == 0 {
            return Err(invalid("batch size, epochs and steps per epoch must be positive"));
        }
        if self.eval_samples < 2 {
            return Err(invalid("evaluation needs at least 2 samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LfaiOutput {
    /// Iterate with the lowest evaluation risk seen, including the start.
    pub factors: FactorPair,
    pub best_risk: f64,
    /// Evaluation risk at the start and after every epoch.
    pub trace: Vec<f64>,
}

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_INIT: u64 = 3;

/// Truncated normal (cut at two standard deviations) factors with standard
/// deviation `1/sqrt(fan_in)`: `d` for `U`, `r` for `V`.
pub fn baseline_factor_init(d: usize, m: usize, r: usize, seed: RngSeed) -> FactorPair {
    let mut rng = seed.rng();
    let mut draw = |std: f64| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    };
    let su = 1.0 / (d as f64).sqrt();
    let sv = 1.0 / (r as f64).sqrt();
    let u = DenseMatrix::from_fn(d, r, |_, _| draw(su));
    let v = DenseMatrix::from_fn(m, r, |_, _| draw(sv));
    FactorPair { u, v }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Layerwise function approximation: Adam on fresh Monte Carlo batches of
/// the layer objective, starting from spectral factors when `warm_start`.
///
/// Stops after `max_epochs` or once the evaluation risk changes by less than
/// `rel_tol` (relative) over an epoch. Fails with [`NlraError::Divergence`]
/// when the evaluation risk exceeds ten times its starting value (floored at
/// `1e-8 ||W||_F^2 / 2`) for two consecutive epochs.
pub fn lfai(w: &DenseMatrix, r: usize, act: Activation, opts: &LfaiOptions) -> Result<LfaiOutput> {
    opts.validate()?;
    check_rank_range(w, r)?;
    let (d, m) = w.shape();
    let start = if opts.warm_start {
        spectral_init(w, r)?
    } else {
        baseline_factor_init(d, m, r, opts.seed.derive(&[STREAM_INIT]))
    };
    let eval_seed = opts.seed.derive(&[STREAM_EVAL]);
    let evaluate = |f: &FactorPair| -> Result<f64> {
        let y = f.product()?;
        match act {
            Activation::Relu => risk_relu_exact_value(w, &y),
            _ => Ok(risk_mc(w, &y, act, opts.eval_samples, eval_seed)?.value),
        }
    };

    let initial = evaluate(&start)?;
    let mut trace = vec![initial];
    let mut best = (start.clone(), initial);
    let threshold = 10.0 * initial.max(0.5e-8 * w.frobenius_norm().powi(2));
    let mut over = 0;

    let mut params: Vec<f64> = start.u.data().iter().chain(start.v.data()).copied().collect();
    let split = d * r;
    let mut adam = Adam::new(params.len());
    let unpack = |p: &[f64]| -> Result<FactorPair> {
        FactorPair::new(
            DenseMatrix::new(d, r, p[..split].to_vec())?,
            DenseMatrix::new(m, r, p[split..].to_vec())?,
        )
    };

    for epoch in 0..opts.max_epochs {
        for s in 0..opts.steps_per_epoch {
            let step = (epoch * opts.steps_per_epoch + s) as u64;
            let current = unpack(&params).map_err(|_| NlraError::Divergence {
                trace: trace.clone(),
            })?;
            let (gu, gv) = risk_mc_gradient(
                w,
                &current.u,
                &current.v,
                act,
                opts.batch_size,
                opts.seed.derive(&[STREAM_TRAIN, step]),
            )?;
            let grad: Vec<f64> = gu.data().iter().chain(gv.data()).copied().collect();
            adam.step(&mut params, &grad, opts.step_size);
        }
        let current = unpack(&params).map_err(|_| NlraError::Divergence {
            trace: trace.clone(),
        })?;
        let value = evaluate(&current)?;
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(value);
        log::debug!("lfai epoch {epoch}: evaluation risk {value:.6e}");
        if !value.is_finite() {
            return Err(NlraError::Divergence { trace });
        }
        if value < best.1 {
            best = (current, value);
        }
        over = if value > threshold { over + 1 } else { 0 };
        if over >= 2 {
            return Err(NlraError::Divergence { trace });
        }
        if (previous - value).abs() <= opts.rel_tol * previous.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(LfaiOutput {
        factors: best.0,
        best_risk: best.1.max(0.0),
        trace,
    })
}
