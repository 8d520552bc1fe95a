//! Population risk `R(Y) = E_x ||sigma(x^T Y) - sigma(x^T W)||^2`, `x ~ N(0, I)`.
//!
//! For ReLU the expectation has the closed form
//! `||W||^2/2 + ||Y||^2/2 - sum_i ||W_i|| ||Y_i|| sqrt_h(rho_i)`.
//! Every activation can be estimated by Monte Carlo; estimates with the same
//! seed share their input samples, so comparisons between candidates use
//! common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{invalid, NlraError, Result};
use crate::hermite::{sqrt_h_derivative, sqrt_h_unchecked};
use crate::linalg::{block_count, block_len, dot, gaussian_block, DenseMatrix, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMethod {
    ExactRelu,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub value: f64,
    pub method: RiskMethod,
    pub n_samples: Option<usize>,
    pub std_error: Option<f64>,
}

/// Values down to this far below zero are roundoff and reported as 0.
const NEGATIVE_ROUNDOFF: f64 = 1e-9;

fn clip_nonnegative(v: f64) -> Result<f64> {
    if v < -NEGATIVE_ROUNDOFF {
        return Err(invalid(format!("risk evaluated to {v}, below roundoff")));
    }
    Ok(v.max(0.0))
}

fn check_same_shape(w: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    y.expect_shape(w.shape())
}

/// Per-column correlations `<Y_i, W_i> / (||Y_i|| ||W_i||)`, 0 when either
/// column vanishes.
pub fn column_correlations(w: &DenseMatrix, y: &DenseMatrix) -> Result<Vec<f64>> {
    check_same_shape(w, y)?;
    let (wn, yn) = (w.column_norms(), y.column_norms());
    Ok((0..w.cols())
        .map(|i| {
            if wn[i] == 0.0 || yn[i] == 0.0 {
                0.0
            } else {
                (dot(&w.column(i), &y.column(i)) / (wn[i] * yn[i])).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Exact population risk for ReLU.
pub fn risk_relu_exact(w: &DenseMatrix, y: &DenseMatrix) -> Result<RiskReport> {
    let value = clip_nonnegative(risk_relu_exact_value(w, y)?)?;
    Ok(RiskReport {
        value,
        method: RiskMethod::ExactRelu,
        n_samples: None,
        std_error: None,
    })
}

/// Unclipped exact ReLU risk.
pub fn risk_relu_exact_value(w: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    check_same_shape(w, y)?;
    let (wn, yn) = (w.column_norms(), y.column_norms());
    let rho = column_correlations(w, y)?;
    let mut cross = 0.0;
    for i in 0..w.cols() {
        if wn[i] > 0.0 && yn[i] > 0.0 {
            cross += wn[i] * yn[i] * sqrt_h_unchecked(rho[i]);
        }
    }
    let wf = w.frobenius_norm();
    let yf = y.frobenius_norm();
    Ok(0.5 * wf * wf + 0.5 * yf * yf - cross)
}

/// Gradient of the exact ReLU risk with respect to `Y`.
///
/// Columns of `Y` that vanish get the one-sided derivative along `W_i`,
/// `-||W_i|| sqrt_h(1) W_i/||W_i||`.
pub fn risk_relu_exact_gradient(w: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape(w, y)?;
    let (d, m) = w.shape();
    let (wn, yn) = (w.column_norms(), y.column_norms());
    let mut grad = y.clone();
    for i in 0..m {
        if wn[i] == 0.0 {
            continue;
        }
        let wc = w.column(i);
        let what: Vec<f64> = wc.iter().map(|v| v / wn[i]).collect();
        if yn[i] == 0.0 {
            for r in 0..d {
                grad.set(r, i, grad.get(r, i) - wn[i] * what[r]);
            }
            continue;
        }
        let yc = y.column(i);
        let yhat: Vec<f64> = yc.iter().map(|v| v / yn[i]).collect();
        let rho = dot(&what, &yhat).clamp(-1.0, 1.0);
        let (s, ds) = (sqrt_h_unchecked(rho), sqrt_h_derivative(rho));
        for r in 0..d {
            let g = yhat[r] * s + ds * (what[r] - rho * yhat[r]);
            grad.set(r, i, grad.get(r, i) - wn[i] * g);
        }
    }
    Ok(grad)
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }
}

/// `out = sigma(x^T M)` for a `d x m` matrix `M`.
fn activate_row(x: &[f64], m: &DenseMatrix, act: Activation, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += xi * mij;
        }
    }
    out.iter_mut().for_each(|v| *v = act.eval(*v));
}

/// Monte Carlo risk with its standard error.
pub fn risk_mc(
    w: &DenseMatrix,
    y: &DenseMatrix,
    act: Activation,
    n_samples: usize,
    seed: RngSeed,
) -> Result<RiskReport> {
    check_same_shape(w, y)?;
    if n_samples < 2 {
        return Err(invalid("Monte Carlo risk needs at least 2 samples"));
    }
    let (d, m) = w.shape();
    let moments = (0..block_count(n_samples))
        .into_par_iter()
        .map(|b| {
            let xs = gaussian_block(d, block_len(n_samples, b), seed, b);
            let (mut fw, mut fy) = (vec![0.0; m], vec![0.0; m]);
            let mut acc = Moments::default();
            for x in xs.chunks_exact(d) {
                activate_row(x, w, act, &mut fw);
                activate_row(x, y, act, &mut fy);
                acc.push(fw.iter().zip(&fy).map(|(a, b)| (b - a) * (b - a)).sum());
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge);
    let n = moments.count;
    let variance = moments.m2 / (n - 1.0);
    Ok(RiskReport {
        value: clip_nonnegative(moments.mean)?,
        method: RiskMethod::MonteCarlo,
        n_samples: Some(n_samples),
        std_error: Some((variance / n).sqrt()),
    })
}

/// Monte Carlo risk of a factored candidate `U V^T`.
pub fn risk_mc_factors(
    w: &DenseMatrix,
    factors: &crate::approx::FactorPair,
    act: Activation,
    n_samples: usize,
    seed: RngSeed,
) -> Result<RiskReport> {
    risk_mc(w, &factors.product()?, act, n_samples, seed)
}

/// Gradient of the sampled objective
/// `(1/N) sum_k ||sigma(x_k^T U V^T) - sigma(x_k^T W)||^2` with respect to
/// `U` (`d x r`) and `V` (`m x r`).
pub fn risk_mc_gradient(
    w: &DenseMatrix,
    u: &DenseMatrix,
    v: &DenseMatrix,
    act: Activation,
    n_samples: usize,
    seed: RngSeed,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (d, m) = w.shape();
    let r = u.cols();
    if u.rows() != d || v.rows() != m || v.cols() != r {
        return Err(NlraError::ShapeMismatch {
            expected: format!("U: {d}x{r}, V: {m}x{r}"),
            found: format!(
                "U: {}x{}, V: {}x{}",
                u.rows(),
                u.cols(),
                v.rows(),
                v.cols()
            ),
        });
    }
    if n_samples == 0 {
        return Err(invalid("gradient estimate needs at least one sample"));
    }
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..block_count(n_samples))
        .into_par_iter()
        .map(|b| {
            let xs = gaussian_block(d, block_len(n_samples, b), seed, b);
            let mut gu = vec![0.0; d * r];
            let mut gv = vec![0.0; m * r];
            let mut target = vec![0.0; m];
            let mut p = vec![0.0; r];
            let mut q = vec![0.0; r];
            for x in xs.chunks_exact(d) {
                activate_row(x, w, act, &mut target);
                p.iter_mut().for_each(|v| *v = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    for (pl, &uil) in p.iter_mut().zip(u.row(i)) {
                        *pl += xi * uil;
                    }
                }
                q.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..m {
                    let vj = v.row(j);
                    let z = dot(&p, vj);
                    let g = 2.0 * (act.eval(z) - target[j]) * act.deriv(z);
                    if g == 0.0 {
                        continue;
                    }
                    for l in 0..r {
                        gv[j * r + l] += g * p[l];
                        q[l] += g * vj[l];
                    }
                }
                for (i, &xi) in x.iter().enumerate() {
                    for l in 0..r {
                        gu[i * r + l] += xi * q[l];
                    }
                }
            }
            (gu, gv)
        })
        .collect();
    let mut gu = vec![0.0; d * r];
    let mut gv = vec![0.0; m * r];
    for (pu, pv) in partials {
        gu.iter_mut().zip(pu).for_each(|(a, b)| *a += b);
        gv.iter_mut().zip(pv).for_each(|(a, b)| *a += b);
    }
    let n = n_samples as f64;
    Ok((
        DenseMatrix::new(d, r, gu.into_iter().map(|v| v / n).collect())?,
        DenseMatrix::new(m, r, gv.into_iter().map(|v| v / n).collect())?,
    ))
}
