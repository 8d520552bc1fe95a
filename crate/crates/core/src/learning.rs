//! Learning a low-rank ReLU layer from input/label samples.
//!
//! The learner first recovers every column of `W` by projected gradient
//! descent on a single-neuron regression, then estimates the ReLU kernel from
//! a disjoint sample set and runs NKP on the estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::approx::{nkp, nkp_with_kernel};
use crate::error::{invalid, NlraError, Result};
use crate::kernel::{estimate_kernel_from_labels, kernel_matrix, KernelMatrix};
use crate::linalg::{dot, sample_inputs, sym_eig, DenseMatrix, RngSeed};
use crate::risk::risk_relu_exact_value;

/// Source of i.i.d. pairs `(x, relu(x^T W))`, `x ~ N(0, I_d)`.
#[derive(Debug, Clone)]
pub struct SampleOracle {
    w: DenseMatrix,
    seed: RngSeed,
}

/// Labelled samples: inputs `n x d` and labels `n x m`.
#[derive(Debug, Clone)]
pub struct Samples {
    pub inputs: DenseMatrix,
    pub labels: DenseMatrix,
}

impl SampleOracle {
    pub fn new(w: DenseMatrix, seed: RngSeed) -> Self {
        Self { w, seed }
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn m(&self) -> usize {
        self.w.cols()
    }

    /// The hidden weights. Only used to score a learner, never to train one.
    pub fn ground_truth(&self) -> &DenseMatrix {
        &self.w
    }

    /// `n` samples from an independent stream. Different `stream` values
    /// give disjoint sample sets.
    pub fn draw(&self, n: usize, stream: u64) -> Result<Samples> {
        if n == 0 {
            return Err(invalid("cannot draw zero samples"));
        }
        let inputs = sample_inputs(self.d(), n, self.seed.derive(&[stream]));
        let labels = inputs.matmul(&self.w)?;
        let data = labels.into_data().into_iter().map(|v| v.max(0.0)).collect();
        let labels = DenseMatrix::new(n, self.m(), data)?;
        Ok(Samples { inputs, labels })
    }
}

/// Derivative of ReLU used inside recovery. Taking 1/2 at the kink lets
/// descent started at the origin move; with 0 the gradient vanishes there.
fn relu_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn column_loss(inputs: &DenseMatrix, targets: &[f64], w: &[f64]) -> f64 {
    (0..inputs.rows())
        .map(|k| (dot(inputs.row(k), w).max(0.0) - targets[k]).powi(2))
        .sum::<f64>()
        * 0.5
}

fn project_ball(w: &mut [f64], radius: f64) {
    let n = dot(w, w).sqrt();
    if n > radius {
        w.iter_mut().for_each(|v| *v *= radius / n);
    }
}

const MAX_HALVINGS: usize = 60;

/// Projected gradient descent from the origin on
/// `(1/2) sum_k (relu(x_k^T w) - y_k)^2`, projecting onto the ball of radius
/// `radius` after each step. Step size starts at `2/n` and is halved whenever
/// a step would increase the loss. Returns the iterates `w_1, ..., w_iters`.
pub fn recover_relu_column_traced(
    inputs: &DenseMatrix,
    targets: &[f64],
    radius: f64,
    iters: usize,
) -> Result<Vec<Vec<f64>>> {
    let (n, d) = inputs.shape();
    if targets.len() != n {
        return Err(NlraError::ShapeMismatch {
            expected: format!("{n} targets"),
            found: format!("{}", targets.len()),
        });
    }
    if targets.is_empty() {
        return Err(invalid("column recovery needs at least one sample"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("radius {radius} must be positive")));
    }
    if iters == 0 {
        return Err(invalid("column recovery needs at least one iteration"));
    }
    let mut w = vec![0.0; d];
    let mut loss = column_loss(inputs, targets, &w);
    let mut step = 2.0 / n as f64;
    let mut trace = Vec::with_capacity(iters);
    let mut grad = vec![0.0; d];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..n {
            let x = inputs.row(k);
            let z = dot(x, &w);
            let c = (z.max(0.0) - targets[k]) * relu_slope(z);
            if c != 0.0 {
                grad.iter_mut().zip(x).for_each(|(g, xi)| *g += c * xi);
            }
        }
        for _ in 0..MAX_HALVINGS {
            let mut cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            project_ball(&mut cand, radius);
            let cand_loss = column_loss(inputs, targets, &cand);
            if cand_loss <= loss {
                w = cand;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
        }
        trace.push(w.clone());
    }
    Ok(trace)
}

/// Final iterate of [`recover_relu_column_traced`].
pub fn recover_relu_column(
    inputs: &DenseMatrix,
    targets: &[f64],
    radius: f64,
    iters: usize,
) -> Result<Vec<f64>> {
    let mut trace = recover_relu_column_traced(inputs, targets, radius, iters)?;
    Ok(trace.pop().expect("at least one iteration"))
}

/// Columnwise recovery of `W` from shared inputs and `n x m` labels.
pub fn recover_w(samples: &Samples, radius: f64, iters: usize) -> Result<DenseMatrix> {
    let (n, m) = samples.labels.shape();
    if samples.inputs.rows() != n {
        return Err(NlraError::ShapeMismatch {
            expected: format!("{n} input rows"),
            found: format!("{}", samples.inputs.rows()),
        });
    }
    let columns = (0..m)
        .into_par_iter()
        .map(|j| recover_relu_column(&samples.inputs, &samples.labels.column(j), radius, iters))
        .collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_columns(&columns)
}

/// Radius heuristic: `E[relu(x^T w)^2] = ||w||^2 / 2`, so each column norm is
/// estimated as `sqrt(2 mean(y^2))`; the largest estimate is inflated by 1.5.
pub fn radius_heuristic(labels: &DenseMatrix) -> f64 {
    let n = labels.rows() as f64;
    let largest = (0..labels.cols())
        .map(|j| {
            let ms = labels.column(j).iter().map(|y| y * y).sum::<f64>() / n;
            (2.0 * ms).sqrt()
        })
        .fold(0.0, f64::max);
    (1.5 * largest).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    /// Empirical kernel from a fresh sample set.
    Estimated,
    /// Closed-form kernel of the recovered weights.
    ClosedForm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShallowLearnOptions {
    pub r: usize,
    pub n_w: usize,
    pub n_k: usize,
    /// Ball radius for recovery; the label heuristic when absent.
    pub radius: Option<f64>,
    pub iters: usize,
    pub kernel: KernelSource,
}

impl ShallowLearnOptions {
    pub fn new(r: usize, n_w: usize, n_k: usize) -> Self {
        Self {
            r,
            n_w,
            n_k,
            radius: None,
            iters: 60,
            kernel: KernelSource::Estimated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub w_error: f64,
    pub k_error: f64,
    pub learned_risk: f64,
    pub oracle_risk: f64,
    /// Not clipped: NKP on the true weights is not the risk minimizer, so a
    /// learned solution can beat it.
    pub suboptimality: f64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub y_hat: DenseMatrix,
    pub w_hat: DenseMatrix,
    pub k_hat: KernelMatrix,
    pub radius: f64,
    pub report: LearnReport,
    pub warnings: Vec<String>,
}

const STREAM_W: u64 = 1;
const STREAM_K: u64 = 2;

/// The two-stage learner: recover `W_hat` from `n_w` samples, estimate the
/// kernel from `n_k` fresh samples, return `W_hat V_hat V_hat^T`.
pub fn shallow_learn(oracle: &SampleOracle, opts: &ShallowLearnOptions) -> Result<LearnOutcome> {
    let (d, m) = (oracle.d(), oracle.m());
    if opts.n_w == 0 || opts.n_k == 0 {
        return Err(invalid("sample sizes must be positive"));
    }
    if opts.r == 0 || opts.r > d.min(m) {
        return Err(invalid(format!("rank {} must lie in 1..={}", opts.r, d.min(m))));
    }
    let train = oracle.draw(opts.n_w, STREAM_W)?;
    let radius = opts.radius.unwrap_or_else(|| radius_heuristic(&train.labels));
    let w_hat = recover_w(&train, radius, opts.iters)?;
    drop(train);

    let k_hat = match opts.kernel {
        KernelSource::Estimated => estimate_kernel_from_labels(&oracle.draw(opts.n_k, STREAM_K)?.labels)?,
        KernelSource::ClosedForm => kernel_matrix(&w_hat, Activation::Relu)?,
    };
    let learned = nkp_with_kernel(&w_hat, &k_hat, opts.r)?;
    let mut warnings = learned.warnings;

    let w = oracle.ground_truth();
    let k_true = kernel_matrix(w, Activation::Relu)?;
    let oracle_nkp = nkp(w, opts.r, Activation::Relu)?;
    warnings.extend(oracle_nkp.warnings.into_iter().map(|s| format!("oracle: {s}")));
    let learned_risk = risk_relu_exact_value(w, &learned.y)?;
    let oracle_risk = risk_relu_exact_value(w, &oracle_nkp.y)?;
    let report = LearnReport {
        w_error: w_hat.frobenius_distance(w)?,
        k_error: k_hat.frobenius_distance(&k_true)?,
        learned_risk,
        oracle_risk,
        suboptimality: learned_risk - oracle_risk,
    };
    Ok(LearnOutcome {
        y_hat: learned.y,
        w_hat,
        k_hat,
        radius,
        report,
        warnings,
    })
}

/// Both sides of the Davis-Kahan bound for the top-`r` eigenspaces:
/// `||V V^T - V_hat V_hat^T||_F` and
/// `2 sqrt(2) ||K - K_hat||_F / (lambda_r - lambda_{r+1})`, eigenvalues of
/// `K` sorted descending and indexed from 1.
pub fn davis_kahan_check(k_true: &KernelMatrix, k_est: &KernelMatrix, r: usize) -> Result<(f64, f64)> {
    let m = k_true.size();
    if k_est.size() != m {
        return Err(NlraError::ShapeMismatch {
            expected: format!("{m}x{m}"),
            found: format!("{0}x{0}", k_est.size()),
        });
    }
    if r == 0 || r >= m {
        return Err(invalid(format!("rank {r} must lie in 1..{m}")));
    }
    let (values, vectors) = sym_eig(k_true.as_matrix())?;
    let gap = values[r - 1] - values[r];
    if gap <= 1e-12 {
        return Err(NlraError::DegenerateGap { r, gap });
    }
    let (_, est_vectors) = sym_eig(k_est.as_matrix())?;
    let v = vectors.leading_columns(r);
    let v_hat = est_vectors.leading_columns(r);
    let p = v.matmul_transpose(&v)?;
    let p_hat = v_hat.matmul_transpose(&v_hat)?;
    let lhs = p.frobenius_distance(&p_hat)?;
    let rhs = 2.0 * 2f64.sqrt() * k_true.frobenius_distance(k_est)? / gap;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sample_gaussian_matrix};

    fn unit_vector(d: usize, seed: u64) -> Vec<f64> {
        let v = sample_gaussian_matrix(d, 1, RngSeed(seed)).column(0);
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn column_problem(w_star: &[f64], n: usize, seed: u64) -> Samples {
        let w = DenseMatrix::from_columns(&[w_star.to_vec()]).unwrap();
        SampleOracle::new(w, RngSeed(seed)).draw(n, 0).unwrap()
    }

    fn distance(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_target_stays_at_origin() {
        let s = column_problem(&[0.0; 5], 40, 1);
        let w = recover_relu_column(&s.inputs, &s.labels.column(0), 1.0, 1).unwrap();
        assert_eq!(w, vec![0.0; 5]);
    }

    #[test]
    fn recovery_converges_when_well_conditioned() {
        let d = 20;
        for seed in 0..5 {
            let w_star = unit_vector(d, 100 + seed);
            let s = column_problem(&w_star, 40 * d, seed);
            let w = recover_relu_column(&s.inputs, &s.labels.column(0), 1.5, 50).unwrap();
            assert!(distance(&w, &w_star) <= 1e-6, "seed {seed}: {}", distance(&w, &w_star));
        }
    }

    #[test]
    fn recovery_error_trace_is_non_increasing() {
        let d = 10;
        let w_star = unit_vector(d, 7);
        let s = column_problem(&w_star, 40 * d, 3);
        let trace = recover_relu_column_traced(&s.inputs, &s.labels.column(0), 1.5, 40).unwrap();
        let errors: Vec<f64> = trace.iter().map(|w| distance(w, &w_star)).collect();
        for pair in errors[1..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{errors:?}");
        }
    }

    #[test]
    fn recovery_respects_radius() {
        let w_star = unit_vector(6, 9).into_iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let s = column_problem(&w_star, 100, 4);
        let w = recover_relu_column(&s.inputs, &s.labels.column(0), 1.0, 20).unwrap();
        assert!(norm(&w) <= 1.0 + 1e-12);
    }

    #[test]
    fn recovery_rejects_bad_input() {
        let s = column_problem(&[1.0, 0.0], 10, 1);
        assert!(recover_relu_column(&s.inputs, &[1.0; 3], 1.0, 5).is_err());
        assert!(recover_relu_column(&s.inputs, &s.labels.column(0), 1.0, 0).is_err());
        assert!(recover_relu_column(&s.inputs, &s.labels.column(0), 0.0, 5).is_err());
    }

    #[test]
    fn recover_w_single_column_matches_column_recovery() {
        let w_star = unit_vector(4, 11);
        let s = column_problem(&w_star, 200, 5);
        let w = recover_w(&s, 1.5, 30).unwrap();
        let col = recover_relu_column(&s.inputs, &s.labels.column(0), 1.5, 30).unwrap();
        assert_eq!(w.column(0), col);
    }

    #[test]
    fn more_iterations_never_hurt() {
        let w = sample_gaussian_matrix(5, 3, RngSeed(12));
        let oracle = SampleOracle::new(w.clone(), RngSeed(13));
        let s = oracle.draw(100, 0).unwrap();
        let r = radius_heuristic(&s.labels);
        let e20 = recover_w(&s, r, 20).unwrap().frobenius_distance(&w).unwrap();
        let e40 = recover_w(&s, r, 40).unwrap().frobenius_distance(&w).unwrap();
        assert!(e40 <= e20 + 1e-9);
    }

    #[test]
    fn radius_heuristic_tracks_column_norm() {
        let w = DenseMatrix::new(3, 1, vec![2.0, 0.0, 0.0]).unwrap();
        let s = SampleOracle::new(w, RngSeed(2)).draw(100_000, 0).unwrap();
        let r = radius_heuristic(&s.labels);
        assert!((r - 3.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn oracle_streams_are_disjoint_and_reproducible() {
        let oracle = SampleOracle::new(sample_gaussian_matrix(3, 2, RngSeed(1)), RngSeed(5));
        let a = oracle.draw(10, 1).unwrap();
        let b = oracle.draw(10, 2).unwrap();
        assert_ne!(a.inputs, b.inputs);
        assert_eq!(a.inputs, oracle.draw(10, 1).unwrap().inputs);
        assert!(a.labels.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shallow_learn_realizable_rank_one() {
        // nonnegative right factor: the ReLU kernel of W is then rank one
        let a = unit_vector(4, 21);
        let b: Vec<f64> = (0..6).map(|j| 0.5 + 0.1 * j as f64).collect();
        let w = DenseMatrix::from_fn(4, 6, |i, j| a[i] * b[j]);
        let oracle = SampleOracle::new(w, RngSeed(3));
        let out = shallow_learn(&oracle, &ShallowLearnOptions::new(1, 20_000, 20_000)).unwrap();
        assert!(out.report.learned_risk <= 1e-3, "{:?}", out.report);
    }

    #[test]
    fn shallow_learn_report_fields() {
        let w = sample_gaussian_matrix(4, 6, RngSeed(30));
        let oracle = SampleOracle::new(w.clone(), RngSeed(31));
        let out = shallow_learn(&oracle, &ShallowLearnOptions::new(2, 2000, 2000)).unwrap();
        let rep = &out.report;
        assert!(rep.w_error.is_finite() && rep.k_error.is_finite());
        assert!((rep.suboptimality - (rep.learned_risk - rep.oracle_risk)).abs() < 1e-15);
        assert_eq!(rep.learned_risk, risk_relu_exact_value(&w, &out.y_hat).unwrap());
        let s = crate::linalg::svd(&out.y_hat).unwrap().singular_values;
        assert!(s[2] <= 1e-8 * s[0]);
    }

    #[test]
    fn shallow_learn_closed_form_kernel_mode() {
        let w = sample_gaussian_matrix(4, 6, RngSeed(40));
        let oracle = SampleOracle::new(w, RngSeed(41));
        let mut opts = ShallowLearnOptions::new(2, 5000, 1);
        opts.kernel = KernelSource::ClosedForm;
        let out = shallow_learn(&oracle, &opts).unwrap();
        let expected = kernel_matrix(&out.w_hat, Activation::Relu).unwrap();
        assert_eq!(out.k_hat, expected);
    }

    #[test]
    fn shallow_learn_rejects_bad_options() {
        let oracle = SampleOracle::new(sample_gaussian_matrix(3, 4, RngSeed(1)), RngSeed(2));
        assert!(shallow_learn(&oracle, &ShallowLearnOptions::new(4, 10, 10)).is_err());
        assert!(shallow_learn(&oracle, &ShallowLearnOptions::new(1, 0, 10)).is_err());
    }

    fn random_psd(m: usize, seed: u64) -> KernelMatrix {
        let a = sample_gaussian_matrix(m, m, RngSeed(seed));
        KernelMatrix::new(a.matmul_transpose(&a).unwrap()).unwrap()
    }

    #[test]
    fn davis_kahan_identical_is_zero() {
        let k = random_psd(5, 1);
        assert_eq!(davis_kahan_check(&k, &k, 2).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn davis_kahan_rhs_is_linear_in_perturbation() {
        let k = random_psd(5, 2);
        let h = sample_gaussian_matrix(5, 5, RngSeed(3));
        let sym = h.add(&h.transpose()).unwrap();
        let scale = 1e-3 / sym.frobenius_norm();
        let full = KernelMatrix::new(k.as_matrix().add(&sym.scaled(scale)).unwrap()).unwrap();
        let half = KernelMatrix::new(k.as_matrix().add(&sym.scaled(scale / 2.0)).unwrap()).unwrap();
        let (l1, r1) = davis_kahan_check(&k, &full, 2).unwrap();
        let (l2, r2) = davis_kahan_check(&k, &half, 2).unwrap();
        assert!(l1 <= r1 && l2 <= r2);
        assert!((r1 / r2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn davis_kahan_degenerate_gap() {
        let k = KernelMatrix::new(DenseMatrix::identity(4)).unwrap();
        assert!(matches!(
            davis_kahan_check(&k, &k, 2),
            Err(NlraError::DegenerateGap { r: 2, .. })
        ));
        assert!(davis_kahan_check(&k, &k, 4).is_err());
    }
}
