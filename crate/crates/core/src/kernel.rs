//! Nonlinearity kernels `K(x, y) = E_z[sigma(x^T z) sigma(y^T z)]`, `z ~ N(0, I)`.
//!
//! The ReLU kernel is `||x|| ||y|| sqrt_h(rho) / 2`, i.e. half of the
//! first-order arc-cosine kernel. Other activations are integrated
//! numerically over the 2-D Gaussian of `(x^T z, y^T z)`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{invalid, NlraError, Result};
use crate::hermite::{sqrt_h_unchecked, RHO_CLAMP_TOL};
use crate::linalg::{
    block_count, block_len, dot, gaussian_block, norm, sym_eig, DenseMatrix, RngSeed,
};
use crate::quadrature::{gauss_hermite, gauss_laguerre, gauss_legendre};

pub const DEFAULT_QUAD_ORDER: usize = 64;

/// Correlations this close to +-1 are integrated along the shared direction.
const DEGENERATE_RHO: f64 = 1e-12;

/// Symmetric positive semi-definite `m x m` kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DenseMatrix,
}

impl KernelMatrix {
    pub fn new(values: DenseMatrix) -> Result<Self> {
        let n = values.rows();
        if values.cols() != n {
            return Err(invalid(format!(
                "kernel matrix must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        let tol = 1e-10 * values.max_abs().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (values.get(i, j) - values.get(j, i)).abs() > tol {
                    return Err(invalid(format!("kernel matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn size(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_distance(&self, other: &KernelMatrix) -> Result<f64> {
        self.values.frobenius_distance(&other.values)
    }

    /// All eigenvalues, descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(sym_eig(&self.values)?.0)
    }
}

/// Closed-form ReLU kernel; zero if either vector vanishes.
pub fn kernel_relu(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    let (nx, ny) = (norm(x), norm(y));
    Ok(relu_kernel_from_parts(nx, ny, dot(x, y)))
}

#[inline]
fn relu_kernel_from_parts(nx: f64, ny: f64, inner: f64) -> f64 {
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    0.5 * nx * ny * sqrt_h_unchecked(inner / (nx * ny))
}

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(NlraError::ShapeMismatch {
            expected: format!("vectors of length {}", x.len()),
            found: format!("length {}", y.len()),
        });
    }
    Ok(())
}

/// Kernel of an arbitrary activation by Gaussian quadrature.
///
/// Smooth activations use a tensor-product Gauss-Hermite rule after
/// factoring the 2x2 covariance. Piecewise-linear activations are integrated
/// in polar coordinates with the angular range split at the kinks, where a
/// tensor Hermite rule only reaches ~1e-3.
pub fn kernel_general(x: &[f64], y: &[f64], act: Activation, quad_order: usize) -> Result<f64> {
    check_len(x, y)?;
    let (nx, ny) = (norm(x), norm(y));
    gaussian_pair_expectation(
        nx * nx,
        ny * ny,
        dot(x, y),
        |a, b| act.eval(a) * act.eval(b),
        quad_order,
        act.is_piecewise_linear(),
    )
}

/// `E[f(a, b)]` for a centered bivariate Gaussian with the given covariance.
///
/// `kinked` declares that `f` is only piecewise smooth with breaks on the
/// lines `a = 0` and `b = 0`.
pub fn gaussian_pair_expectation(
    var_a: f64,
    var_b: f64,
    cov: f64,
    f: impl Fn(f64, f64) -> f64,
    quad_order: usize,
    kinked: bool,
) -> Result<f64> {
    if quad_order < 2 {
        return Err(invalid(format!("quadrature order {quad_order} must be at least 2")));
    }
    if var_a < 0.0 || var_b < 0.0 || !(var_a.is_finite() && var_b.is_finite() && cov.is_finite()) {
        return Err(invalid("covariance has a negative or non-finite variance"));
    }
    let (sa, sb) = (var_a.sqrt(), var_b.sqrt());
    if sa == 0.0 || sb == 0.0 {
        if cov.abs() > RHO_CLAMP_TOL * (var_a + var_b).max(1.0) {
            return Err(invalid("covariance is not positive semi-definite"));
        }
        return Ok(line_expectation(|z| f(sa * z, sb * z), quad_order, kinked));
    }
    let rho = cov / (sa * sb);
    if rho.abs() > 1.0 + RHO_CLAMP_TOL {
        return Err(invalid(format!(
            "covariance is not positive semi-definite (correlation {rho})"
        )));
    }
    let rho = rho.clamp(-1.0, 1.0);
    if rho.abs() >= 1.0 - DEGENERATE_RHO {
        let sign = rho.signum();
        return Ok(line_expectation(|z| f(sa * z, sign * sb * z), quad_order, kinked));
    }
    let tail = (1.0 - rho * rho).sqrt();
    let g = |z1: f64, z2: f64| f(sa * z1, sb * (rho * z1 + tail * z2));
    if kinked {
        // b = 0 where cos(theta - phi) = 0
        Ok(polar_expectation(g, tail.atan2(rho), quad_order))
    } else {
        let rule = gauss_hermite(quad_order);
        let mut total = 0.0;
        for (&z1, &w1) in rule.nodes.iter().zip(&rule.weights) {
            let inner: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&z2, &w2)| w2 * g(z1, z2))
                .sum();
            total += w1 * inner;
        }
        Ok(total)
    }
}

/// `E[g(z)]`, `z ~ N(0, 1)`, split at 0 when `kinked`.
fn line_expectation(g: impl Fn(f64) -> f64, order: usize, kinked: bool) -> f64 {
    if kinked {
        // int_0^inf g(z) phi(z) dz = 1/(2 sqrt(pi)) int_0^inf g(sqrt(2s)) s^{-1/2} e^{-s} ds
        let rule = gauss_laguerre(order, -0.5);
        let scale = 0.5 / PI.sqrt();
        scale
            * rule.integrate(|s| {
                let z = (2.0 * s).sqrt();
                g(z) + g(-z)
            })
    } else {
        gauss_hermite(order).integrate(g)
    }
}

/// `E[g(z1, z2)]` for standard 2-D Gaussian `z`, in polar coordinates with
/// the angular integral split where `z1 = 0` or `cos(theta - phi) = 0`.
fn polar_expectation(g: impl Fn(f64, f64) -> f64, phi: f64, order: usize) -> f64 {
    let two_pi = 2.0 * PI;
    let mut breaks = vec![0.0, two_pi, 0.5 * PI, 1.5 * PI];
    for offset in [0.5 * PI, -0.5 * PI] {
        breaks.push((phi + offset).rem_euclid(two_pi));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let angular = gauss_legendre(order);
    let radial = gauss_laguerre(order, 0.0);
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi - lo <= 0.0 {
            continue;
        }
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (&t, &wt) in angular.nodes.iter().zip(&angular.weights) {
            let theta = mid + half * t;
            let (s, c) = theta.sin_cos();
            let inner = radial.integrate(|q| {
                let r = (2.0 * q).sqrt();
                g(r * c, r * s)
            });
            total += wt * half * inner;
        }
    }
    total / two_pi
}

/// Kernel matrix of the columns of `w`. ReLU uses the closed form.
pub fn kernel_matrix(w: &DenseMatrix, act: Activation) -> Result<KernelMatrix> {
    kernel_matrix_with_order(w, act, DEFAULT_QUAD_ORDER)
}

pub fn kernel_matrix_with_order(
    w: &DenseMatrix,
    act: Activation,
    quad_order: usize,
) -> Result<KernelMatrix> {
    let m = w.cols();
    let cols = w.columns();
    let values = match act {
        Activation::Relu => {
            let norms = w.column_norms();
            let gram = w.transpose().matmul(w)?;
            DenseMatrix::from_fn(m, m, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                relu_kernel_from_parts(norms[a], norms[b], gram.get(a, b))
            })
        }
        _ => {
            let upper: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|i| {
                    (i..m)
                        .map(|j| kernel_general(&cols[i], &cols[j], act, quad_order))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            DenseMatrix::from_fn(m, m, |i, j| {
                if i <= j {
                    upper[i][j - i]
                } else {
                    upper[j][i - j]
                }
            })
        }
    };
    KernelMatrix::new(values)
}

/// Accumulates `(1/N) sum_k f_k f_k^T` over label rows `f_k`.
#[derive(Debug, Clone)]
struct KernelAccumulator {
    m: usize,
    upper: Vec<f64>,
    count: usize,
}

impl KernelAccumulator {
    fn new(m: usize) -> Self {
        Self {
            m,
            upper: vec![0.0; m * m],
            count: 0,
        }
    }

    fn push(&mut self, f: &[f64]) {
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            let row = &mut self.upper[i * self.m..(i + 1) * self.m];
            for j in i..self.m {
                row[j] += fi * f[j];
            }
        }
        self.count += 1;
    }

    fn finish(self) -> Result<KernelMatrix> {
        if self.count == 0 {
            return Err(invalid("kernel estimate needs at least one sample"));
        }
        let n = self.count as f64;
        let m = self.m;
        let values = DenseMatrix::from_fn(m, m, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.upper[a * m + b] / n
        });
        KernelMatrix::new(values)
    }
}

/// Empirical ReLU kernel from label rows `relu(x_k^T W)` (an `N x m` matrix).
pub fn estimate_kernel_from_labels(labels: &DenseMatrix) -> Result<KernelMatrix> {
    let mut acc = KernelAccumulator::new(labels.cols());
    for k in 0..labels.rows() {
        acc.push(labels.row(k));
    }
    acc.finish()
}

/// Empirical ReLU kernel `(1/N) sum_k relu(x_k^T W) relu(x_k^T W)^T` with
/// shared Gaussian inputs across all entries.
pub fn estimate_kernel(w: &DenseMatrix, n_samples: usize, seed: RngSeed) -> Result<KernelMatrix> {
    if n_samples == 0 {
        return Err(invalid("kernel estimate needs at least one sample"));
    }
    let (d, m) = w.shape();
    let mut acc = KernelAccumulator::new(m);
    let mut label = vec![0.0; m];
    for b in 0..block_count(n_samples) {
        let len = block_len(n_samples, b);
        let xs = gaussian_block(d, len, seed, b);
        for x in xs.chunks_exact(d) {
            relu_preactivations(x, w, &mut label);
            acc.push(&label);
        }
    }
    acc.finish()
}

/// `out = relu(x^T W)`.
pub(crate) fn relu_preactivations(x: &[f64], w: &DenseMatrix, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
}
