//! Dense linear algebra, seeded sampling and the decompositions the rest of
//! the crate is built on.
//!
//! Matrices are stored row-major. Decompositions are delegated to LAPACK
//! (through `ndarray-linalg`) and then normalized: singular values and eigenvalues are returned sorted in
//! non-increasing order. Sign conventions of singular/eigen vectors are left
//! to the backend; callers only rely on sign-invariant quantities.

use ndarray::Array2;
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NlraError, Result};
use crate::kernel::KernelMatrix;

/// Real row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix shape {rows}x{cols} has a zero dimension")));
        }
        if data.len() != rows * cols {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{} entries for {rows}x{cols}", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|row| row.len() != c) {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{c} entries in row {bad}"),
                found: format!("{}", rows[bad].len()),
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|col| col.len() != r) {
            return Err(invalid("columns have differing lengths"));
        }
        let mut data = vec![0.0; r * c];
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * c + j] = v;
            }
        }
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in sq.iter_mut().zip(self.row(i)) {
                *acc += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{} rows on the right operand", self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_transpose(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{} columns on the right operand", self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            dot(self.row(i), other.row(j))
        }))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(NlraError::ShapeMismatch {
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    pub fn frobenius_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.frobenius_norm())
    }

    /// Keep only the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    fn to_ndarray(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .expect("shape matches data length")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin singular value decomposition `m = u * diag(s) * vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub vt: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `u[:, ..k] * diag(s[..k]) * vt[..k, :]`.
    pub fn reconstruct(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.rank());
        let (d, m) = (self.u.rows(), self.vt.cols());
        let mut out = DenseMatrix::zeros(d, m);
        for l in 0..k {
            let s = self.singular_values[l];
            if s == 0.0 {
                continue;
            }
            for i in 0..d {
                let a = self.u.get(i, l) * s;
                if a == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out.data[i * m + j] += a * self.vt.get(l, j);
                }
            }
        }
        out
    }
}

/// Acceptance tolerances for the decompositions.
#[derive(Debug, Clone, Copy)]
pub struct LinalgConfig {
    /// Relative Frobenius reconstruction error admitted from the SVD.
    pub svd_residual_tol: f64,
    /// Relative asymmetry admitted by the symmetric eigensolver.
    pub symmetry_tol: f64,
}

impl Default for LinalgConfig {
    fn default() -> Self {
        Self {
            svd_residual_tol: 1e-10,
            symmetry_tol: 1e-10,
        }
    }
}

pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    svd_with(m, &LinalgConfig::default())
}

/// Thin SVD with `k = min(rows, cols)`; fails when the backend does not
/// converge or its factors do not reconstruct the input.
pub fn svd_with(m: &DenseMatrix, cfg: &LinalgConfig) -> Result<SvdResult> {
    let failed = || NlraError::NoConvergence {
        op: "svd",
        rows: m.rows(),
        cols: m.cols(),
    };
    let (u, s, vt) = m.to_ndarray().svddc(JobSvd::Some).map_err(|_| failed())?;
    let (u, vt) = match (u, vt) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(failed()),
    };
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    // stable sort keeps backend order among exact ties
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let out = SvdResult {
        u: DenseMatrix::from_fn(m.rows(), k, |i, j| u[(i, order[j])]),
        singular_values: order.iter().map(|&i| s[i].max(0.0)).collect(),
        vt: DenseMatrix::from_fn(k, m.cols(), |i, j| vt[(order[i], j)]),
    };
    let residual = out.reconstruct(k).frobenius_distance(m)?;
    if !(residual <= cfg.svd_residual_tol * m.frobenius_norm()) {
        return Err(failed());
    }
    Ok(out)
}

/// Full symmetric eigendecomposition, eigenvalues sorted descending and
/// eigenvectors stored as matching columns.
pub fn sym_eig(k: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    sym_eig_with(k, &LinalgConfig::default())
}

pub fn sym_eig_with(k: &DenseMatrix, cfg: &LinalgConfig) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = k.rows();
    if k.cols() != n {
        return Err(invalid(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            k.rows(),
            k.cols()
        )));
    }
    let scale = k.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (k.get(i, j) - k.get(j, i)).abs() > cfg.symmetry_tol * scale {
                return Err(invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let (values, vectors) = k
        .to_ndarray()
        .eigh(UPLO::Upper)
        .map_err(|_| NlraError::NoConvergence {
            op: "symmetric eigendecomposition",
            rows: n,
            cols: n,
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sorted = order.iter().map(|&i| values[i]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    Ok((sorted, vectors))
}

/// The `r` largest eigenpairs of a kernel matrix.
pub fn sym_eig_top_r(k: &KernelMatrix, r: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let m = k.size();
    if r == 0 || r > m {
        return Err(invalid(format!("rank {r} must lie in 1..={m}")));
    }
    let (values, vectors) = sym_eig(k.as_matrix())?;
    Ok((values[..r].to_vec(), vectors.leading_columns(r)))
}

fn check_rank(w: &DenseMatrix, r: usize) -> Result<()> {
    let max = w.rows().min(w.cols());
    if r == 0 || r > max {
        return Err(invalid(format!(
            "rank {r} must lie in 1..={max} for a {}x{} matrix",
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_rank_range(w: &DenseMatrix, r: usize) -> Result<()> {
    check_rank(w, r)
}

/// Frobenius-optimal rank-`r` approximation.
pub fn truncated_svd(w: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    check_rank(w, r)?;
    Ok(svd(w)?.reconstruct(r))
}

/// Seed for every sampling routine; identical seeds give bit-identical
/// streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Stable child seed for a tagged sub-stream.
    pub fn derive(self, tags: &[u64]) -> RngSeed {
        let mut state = splitmix64(self.0 ^ 0x6a09_e667_f3bc_c908);
        for &t in tags {
            state = splitmix64(state ^ splitmix64(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        RngSeed(state)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `d x m` matrix of i.i.d. standard normal entries.
pub fn sample_gaussian_matrix(d: usize, m: usize, seed: RngSeed) -> DenseMatrix {
    let mut rng = seed.rng();
    let data = (0..d * m).map(|_| StandardNormal.sample(&mut rng)).collect();
    DenseMatrix {
        rows: d,
        cols: m,
        data,
    }
}

/// Rows of standard Gaussian inputs drawn in fixed-size blocks, each block
/// from its own derived stream. The sample set is a pure function of
/// `(d, n, seed)` and independent of how blocks are scheduled.
pub(crate) const SAMPLE_BLOCK: usize = 1024;

pub(crate) fn gaussian_block(d: usize, len: usize, seed: RngSeed, block: usize) -> Vec<f64> {
    let mut rng = seed.derive(&[block as u64]).rng();
    (0..d * len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub(crate) fn block_count(n: usize) -> usize {
    n.div_ceil(SAMPLE_BLOCK)
}

pub(crate) fn block_len(n: usize, block: usize) -> usize {
    (n - block * SAMPLE_BLOCK).min(SAMPLE_BLOCK)
}

/// All `n` inputs as an `n x d` matrix, identical to the block stream used by
/// the Monte Carlo estimators.
pub fn sample_inputs(d: usize, n: usize, seed: RngSeed) -> DenseMatrix {
    let mut data = Vec::with_capacity(n * d);
    for b in 0..block_count(n) {
        data.extend(gaussian_block(d, block_len(n, b), seed, b));
    }
    DenseMatrix {
        rows: n,
        cols: d,
        data,
    }
}
