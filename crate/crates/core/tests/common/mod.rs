#![allow(dead_code)]

use nlra_core::risk::{risk_relu_exact_gradient, risk_relu_exact_value};
use nlra_core::{sample_gaussian_matrix, DenseMatrix, RngSeed};

pub fn gaussian(d: usize, m: usize, seed: u64) -> DenseMatrix {
    sample_gaussian_matrix(d, m, RngSeed(seed))
}

pub fn unit_columns(d: usize, m: usize, seed: u64) -> DenseMatrix {
    let w = gaussian(d, m, seed);
    let n = w.column_norms();
    DenseMatrix::from_fn(d, m, |i, j| w.get(i, j) / n[j])
}

pub fn exact(w: &DenseMatrix, y: &DenseMatrix) -> f64 {
    risk_relu_exact_value(w, y).unwrap()
}

fn axpy(a: &DenseMatrix, step: f64, g: &DenseMatrix) -> DenseMatrix {
    a.sub(&g.scaled(step)).unwrap()
}

fn sq(a: &DenseMatrix) -> f64 {
    a.frobenius_norm().powi(2)
}

/// Armijo gradient descent on `Y = U V^T` for the exact ReLU risk.
pub fn refine_factors(w: &DenseMatrix, mut u: DenseMatrix, mut v: DenseMatrix, iters: usize) -> f64 {
    let f = |u: &DenseMatrix, v: &DenseMatrix| exact(w, &u.matmul_transpose(v).unwrap());
    let mut fx = f(&u, &v);
    let mut step = 0.1;
    for _ in 0..iters {
        let g = risk_relu_exact_gradient(w, &u.matmul_transpose(&v).unwrap()).unwrap();
        let gu = g.matmul(&v).unwrap();
        let gv = g.transpose().matmul(&u).unwrap();
        let gn = sq(&gu) + sq(&gv);
        if gn < 1e-26 {
            break;
        }
        loop {
            let (cu, cv) = (axpy(&u, step, &gu), axpy(&v, step, &gv));
            let fc = f(&cu, &cv);
            if fc <= fx - 1e-4 * step * gn {
                u = cu;
                v = cv;
                fx = fc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                return fx;
            }
        }
    }
    fx
}

/// Best exact risk over `restarts` random rank-`r` starts.
pub fn best_rank_r_risk(w: &DenseMatrix, r: usize, restarts: usize, iters: usize, seed: u64) -> f64 {
    let (d, m) = w.shape();
    let scale = (w.frobenius_norm() / ((d * m) as f64).sqrt()).sqrt();
    (0..restarts)
        .map(|k| {
            let u = gaussian(d, r, seed + 2 * k as u64).scaled(scale);
            let v = gaussian(m, r, seed + 2 * k as u64 + 1).scaled(scale);
            refine_factors(w, u, v, iters)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Best exact risk over `Y = B C` with the column space fixed to `B`.
pub fn best_in_span(w: &DenseMatrix, basis: &DenseMatrix, restarts: usize, iters: usize, seed: u64) -> f64 {
    let (r, m) = (basis.cols(), w.cols());
    let f = |c: &DenseMatrix| exact(w, &basis.matmul(c).unwrap());
    (0..restarts)
        .map(|k| {
            let mut c = gaussian(r, m, seed + k as u64);
            let mut fx = f(&c);
            let mut step = 0.1;
            for _ in 0..iters {
                let g = risk_relu_exact_gradient(w, &basis.matmul(&c).unwrap()).unwrap();
                let gc = basis.transpose().matmul(&g).unwrap();
                let gn = sq(&gc);
                if gn < 1e-26 {
                    break;
                }
                loop {
                    let cand = axpy(&c, step, &gc);
                    let fc = f(&cand);
                    if fc <= fx - 1e-4 * step * gn {
                        c = cand;
                        fx = fc;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        return fx;
                    }
                }
            }
            fx
        })
        .fold(f64::INFINITY, f64::min)
}
