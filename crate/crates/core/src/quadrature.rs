//! Gauss quadrature rules built with the Golub-Welsch algorithm.
//!
//! Rules are cached per (family, order) because kernel matrices evaluate
//! thousands of integrals with the same rule.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::linalg::{sym_eig, DenseMatrix};

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Hermite,
    Laguerre { alpha_bits: u64 },
    Legendre,
}

type Cache = Mutex<HashMap<(Family, usize), Arc<QuadratureRule>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(family: Family, order: usize, build: impl FnOnce() -> QuadratureRule) -> Arc<QuadratureRule> {
    if let Some(rule) = cache().lock().expect("quadrature cache poisoned").get(&(family, order)) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(build());
    cache()
        .lock()
        .expect("quadrature cache poisoned")
        .insert((family, order), Arc::clone(&rule));
    rule
}

fn golub_welsch(diag: &[f64], off: &[f64], mass: f64) -> QuadratureRule {
    let n = diag.len();
    let jac = DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let (values, vectors) = sym_eig(&jac).expect("Jacobi matrices are symmetric and finite");
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (values[k], mass * vectors.get(0, k).powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Rule for `E[f(z)]`, `z ~ N(0, 1)` (probabilists' Hermite, unit mass).
pub fn gauss_hermite(order: usize) -> Arc<QuadratureRule> {
    assert!(order >= 1);
    cached(Family::Hermite, order, || {
        let diag = vec![0.0; order];
        let off: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
        golub_welsch(&diag, &off, 1.0)
    })
}

/// Rule for `int_0^inf f(s) s^alpha e^{-s} ds`.
pub fn gauss_laguerre(order: usize, alpha: f64) -> Arc<QuadratureRule> {
    assert!(order >= 1 && alpha > -1.0);
    cached(
        Family::Laguerre {
            alpha_bits: alpha.to_bits(),
        },
        order,
        || {
            let diag: Vec<f64> = (0..order).map(|k| 2.0 * k as f64 + alpha + 1.0).collect();
            let off: Vec<f64> = (1..order)
                .map(|k| (k as f64 * (k as f64 + alpha)).sqrt())
                .collect();
            golub_welsch(&diag, &off, gamma(alpha + 1.0))
        },
    )
}

/// Rule for `int_{-1}^{1} f(t) dt`.
pub fn gauss_legendre(order: usize) -> Arc<QuadratureRule> {
    assert!(order >= 1);
    cached(Family::Legendre, order, || {
        let diag = vec![0.0; order];
        let off: Vec<f64> = (1..order)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        golub_welsch(&diag, &off, 2.0)
    })
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for positive
/// arguments.
fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}
