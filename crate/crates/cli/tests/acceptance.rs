//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints its `PASS`/`FAIL` line; exits non-zero if any criterion fails
//! (including its runtime budget).

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use nlra_core::approx::DEFAULT_SUBSET_CAP;
use nlra_core::gap::{median, spherical_rate};
use nlra_core::learning::recover_relu_column_traced;
use nlra_core::risk::{risk_relu_exact_gradient, risk_relu_exact_value};
use nlra_core::{
    davis_kahan_check, estimate_kernel, gap_lower_bound, kernel_general, kernel_matrix,
    kernel_relu, lfai, nkp, relu_svd, relu_svd_with_mask, rho_svd, sample_gaussian_matrix,
    sample_spherical_w, shallow_learn, spectral_init, spherical_sweep, sqrt_h_closed,
    sqrt_h_series, truncated_svd, Activation, DenseMatrix, KernelMatrix, LambdaMask, LfaiOptions,
    RngSeed, SampleOracle, ShallowLearnOptions, SweepConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use tempfile::TempDir;

fn verdict(id: u32, name: &str, ok: bool, budget: Duration, start: Instant, detail: String) -> bool {
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = ok && in_time;
    println!(
        "criterion {id:>2} [{name}]: {} ({detail}; {:.2}s of {:.0}s budget)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    pass
}

fn gaussian(d: usize, m: usize, seed: u64) -> DenseMatrix {
    sample_gaussian_matrix(d, m, RngSeed(seed))
}

fn unit_columns(d: usize, m: usize, seed: u64) -> DenseMatrix {
    let w = gaussian(d, m, seed);
    let n = w.column_norms();
    DenseMatrix::from_fn(d, m, |i, j| w.get(i, j) / n[j])
}

fn exact(w: &DenseMatrix, y: &DenseMatrix) -> f64 {
    risk_relu_exact_value(w, y).unwrap()
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    num / den
}

fn criterion_01_sqrt_h_fidelity() -> bool {
    let start = Instant::now();
    let worst = (0..=1980)
        .map(|k| -0.99 + k as f64 * 1e-3)
        .map(|rho| (sqrt_h_series(rho, 200) - sqrt_h_closed(rho).unwrap()).abs())
        .fold(0.0, f64::max);
    let anchors = (sqrt_h_closed(0.0).unwrap() - 1.0 / PI).abs() <= 1e-12
        && (sqrt_h_closed(1.0).unwrap() - 1.0).abs() <= 1e-12
        && sqrt_h_closed(-1.0).unwrap().abs() <= 1e-12;
    verdict(
        1,
        "sqrt_h fidelity",
        worst <= 1e-6 && anchors,
        Duration::from_secs(1),
        start,
        format!("max series error {worst:.2e}, anchors exact: {anchors}"),
    )
}

/// Plain Monte Carlo of `E[relu(x.z) relu(y.z)]` with its standard error.
fn mc_pair(x: &[f64], y: &[f64], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut z = vec![0.0; x.len()];
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        let a: f64 = x.iter().zip(&z).map(|(p, q)| p * q).sum();
        let b: f64 = y.iter().zip(&z).map(|(p, q)| p * q).sum();
        let v = a.max(0.0) * b.max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn criterion_02_kernel_correctness() -> bool {
    let start = Instant::now();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50u64)
        .map(|k| {
            let x = gaussian(5, 1, 100 + k).column(0);
            let noise = gaussian(5, 1, 200 + k).column(0);
            // mix in x so correlations span (-1, 1)
            let t = (k as f64 / 49.0) * 2.0 - 1.0;
            let y = x.iter().zip(&noise).map(|(a, b)| t * a + (1.0 - t.abs()) * b).collect();
            (x, y)
        })
        .collect();
    let results: Vec<(f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let closed = kernel_relu(x, y).unwrap();
            let (mean, se) = mc_pair(x, y, 1_000_000, 9000 + k as u64);
            let quad = kernel_general(x, y, Activation::Relu, 64).unwrap();
            ((mean - closed).abs() / se, (quad - closed).abs())
        })
        .collect();
    let worst_z = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_quad = results.iter().map(|r| r.1).fold(0.0, f64::max);
    verdict(
        2,
        "kernel correctness",
        worst_z <= 4.0 && worst_quad <= 1e-7,
        Duration::from_secs(30),
        start,
        format!("max |MC - closed| = {worst_z:.2} SE, max |quadrature - closed| = {worst_quad:.2e}"),
    )
}

/// Armijo gradient descent on `U V^T` for the exact ReLU risk.
fn refine(w: &DenseMatrix, mut u: DenseMatrix, mut v: DenseMatrix, iters: usize) -> f64 {
    let f = |u: &DenseMatrix, v: &DenseMatrix| exact(w, &u.matmul_transpose(v).unwrap());
    let mut fx = f(&u, &v);
    let mut step = 0.1;
    for _ in 0..iters {
        let g = risk_relu_exact_gradient(w, &u.matmul_transpose(&v).unwrap()).unwrap();
        let gu = g.matmul(&v).unwrap();
        let gv = g.transpose().matmul(&u).unwrap();
        let gn = gu.frobenius_norm().powi(2) + gv.frobenius_norm().powi(2);
        if gn < 1e-26 {
            break;
        }
        loop {
            let cu = u.sub(&gu.scaled(step)).unwrap();
            let cv = v.sub(&gv.scaled(step)).unwrap();
            let fc = f(&cu, &cv);
            if fc <= fx - 1e-4 * step * gn {
                (u, v, fx) = (cu, cv, fc);
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

fn criterion_03_relu_svd_optimality() -> bool {
    let start = Instant::now();
    let instances: Vec<(DenseMatrix, usize)> = (0..25u64)
        .map(|k| {
            let d = 2 + (k % 5) as usize;
            let m = d + (k % 4) as usize + 1;
            let r = 1 + (k % 2) as usize;
            (gaussian(d, m.min(10), 5000 + k), r.min(d))
        })
        .collect();
    let excess: Vec<f64> = instances
        .par_iter()
        .enumerate()
        .map(|(k, (w, r))| {
            let ours = exact(w, &relu_svd(w, *r, DEFAULT_SUBSET_CAP).unwrap().y);
            let (d, m) = w.shape();
            let scale = (w.frobenius_norm() / ((d * m) as f64).sqrt()).sqrt();
            let oracle = (0..200u64)
                .map(|t| {
                    let base = 1_000_000 + 1000 * k as u64 + 2 * t;
                    refine(w, gaussian(d, *r, base).scaled(scale), gaussian(m, *r, base + 1).scaled(scale), 300)
                })
                .fold(f64::INFINITY, f64::min);
            ours - oracle
        })
        .collect();
    let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = excess.iter().filter(|&&e| e > 1e-6).count();
    verdict(
        3,
        "relu_svd optimality",
        violations == 0,
        Duration::from_secs(300),
        start,
        format!("{violations} of 25 instances beaten by refinement, worst excess {worst:.3e}"),
    )
}

fn criterion_04_gap_identity() -> bool {
    let start = Instant::now();
    let worst = (0..100u64)
        .map(|k| {
            let d = 3 + (k % 6) as usize;
            let m = 4 + (k % 9) as usize;
            let w = gaussian(d, m, 7000 + k);
            let r = 1 + (k as usize % d.min(m));
            let svd_risk = exact(&w, &truncated_svd(&w, r).unwrap());
            let rescaled = exact(&w, &relu_svd_with_mask(&w, &LambdaMask::top(r)).unwrap().y);
            ((svd_risk - rescaled) / d as f64 - gap_lower_bound(&w, r).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        4,
        "gap identity",
        worst <= 1e-10,
        Duration::from_secs(10),
        start,
        format!("max deviation {worst:.2e}"),
    )
}

fn criterion_05_gap_growth_figure() -> bool {
    let start = Instant::now();
    let dims = [20usize, 40, 80];
    let scales = [0.05, 0.1, 0.2];
    let mut cfg = SweepConfig::new(dims.to_vec(), scales.to_vec(), 5, RngSeed(0));
    cfg.dim_fraction = 0.2;
    cfg.width_exponent = 1.5;
    let rows = spherical_sweep(&cfg).unwrap();
    // rows are nested (n, scale, trial) and every cell here is feasible
    assert_eq!(rows.len(), dims.len() * scales.len() * 5);
    let cell = |i: usize, j: usize| {
        let block = &rows[(i * scales.len() + j) * 5..][..5];
        let gaps: Vec<f64> = block.iter().map(|row| row.gap_bound).collect();
        (median(&gaps), spherical_rate(block[0].d, block[0].r), block[0].r)
    };
    let med: Vec<Vec<(f64, f64, usize)>> = (0..dims.len()).map(|i| (0..scales.len()).map(|j| cell(i, j)).collect()).collect();

    let grows_in_n = (0..scales.len()).all(|j| (1..dims.len()).all(|i| med[i][j].0 > med[i - 1][j].0));
    let falls_in_scale = (0..dims.len()).all(|i| (1..scales.len()).all(|j| med[i][j].0 < med[i][j - 1].0));
    // constant fitted on the smallest n (geometric mean over scales)
    let c = (med[0].iter().map(|(g, rate, _)| (g / rate).ln()).sum::<f64>() / scales.len() as f64).exp();
    let worst_ratio = med
        .iter()
        .flatten()
        .map(|(g, rate, _)| {
            let q = g / (c * rate);
            q.max(1.0 / q)
        })
        .fold(0.0, f64::max);
    let ranks: Vec<Vec<usize>> = med.iter().map(|row| row.iter().map(|c| c.2).collect()).collect();
    let medians: Vec<Vec<String>> = med.iter().map(|row| row.iter().map(|c| format!("{:.3e}", c.0)).collect()).collect();
    verdict(
        5,
        "gap growth figure",
        grows_in_n && falls_in_scale && worst_ratio <= 3.0,
        Duration::from_secs(120),
        start,
        format!(
            "increasing in n: {grows_in_n}, decreasing in scale: {falls_in_scale}, worst rate ratio {worst_ratio:.2}, medians {medians:?}, ranks {ranks:?}"
        ),
    )
}

fn criterion_06_mean_rho_figure() -> bool {
    let start = Instant::now();
    let cells = [(50usize, 2000usize, 8usize), (100, 2000, 10), (100, 5000, 20), (100, 5000, 50)];
    let stats: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .enumerate()
        .map(|(k, &(d, m, r))| {
            let w = sample_spherical_w(d, m, RngSeed(600 + k as u64));
            let rho = rho_svd(&w, r).unwrap();
            (rho.mean(), (r as f64 / d as f64).sqrt(), rho.std())
        })
        .collect();
    let ok = stats.iter().all(|(mean, target, std)| (mean - target).abs() <= 0.05 && *std <= 0.08);
    let detail = cells
        .iter()
        .zip(&stats)
        .map(|((d, m, r), (mean, target, std))| {
            format!("(d={d}, m={m}, r={r}) mean {mean:.3} vs {target:.3}, std {std:.3}")
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(6, "mean rho figure", ok, Duration::from_secs(60), start, detail)
}

fn criterion_07_kernel_estimator_rate() -> bool {
    let start = Instant::now();
    let ns = [100usize, 1_000, 10_000, 100_000];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for seed in 0..10u64 {
        let w = gaussian(5, 8, 300 + seed);
        let k = kernel_matrix(&w, Activation::Relu).unwrap();
        for &n in &ns {
            let est = estimate_kernel(&w, n, RngSeed(1000 * seed + n as u64)).unwrap();
            xs.push((n as f64).ln());
            ys.push(est.frobenius_distance(&k).unwrap().ln());
        }
    }
    let slope = regression_slope(&xs, &ys);
    verdict(
        7,
        "kernel estimator rate",
        (slope + 0.5).abs() <= 0.15,
        Duration::from_secs(120),
        start,
        format!("log-log slope {slope:.3}"),
    )
}

fn criterion_08_realizable_recovery() -> bool {
    let start = Instant::now();
    let d = 20;
    let results: Vec<(f64, f64)> = (0..10u64)
        .map(|seed| {
            let w_star = unit_columns(d, 1, 800 + seed);
            let samples = SampleOracle::new(w_star.clone(), RngSeed(seed)).draw(4 * d, 0).unwrap();
            let trace = recover_relu_column_traced(&samples.inputs, &samples.labels.column(0), 1.0, 50).unwrap();
            let errors: Vec<f64> = trace
                .iter()
                .map(|w| w.iter().zip(w_star.column(0)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            let logs: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
            let ts: Vec<f64> = (0..logs.len()).map(|t| t as f64).collect();
            (*errors.last().unwrap(), regression_slope(&ts, &logs))
        })
        .collect();
    let converged = results.iter().filter(|r| r.0 <= 1e-6).count();
    let worst_slope = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let median_err = median(&results.iter().map(|r| r.0).collect::<Vec<_>>());
    verdict(
        8,
        "realizable recovery",
        converged >= 9 && worst_slope <= 0.7f64.ln(),
        Duration::from_secs(30),
        start,
        format!(
            "{converged}/10 seeds reach 1e-6 (median final error {median_err:.2e}), worst log-error slope {worst_slope:.3} vs {:.3}",
            0.7f64.ln()
        ),
    )
}

fn criterion_09_learning_consistency() -> bool {
    let start = Instant::now();
    let sizes = [1_000usize, 10_000, 100_000];
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let subs: Vec<f64> = (0..10u64)
                .into_par_iter()
                .map(|seed| {
                    let w = sample_spherical_w(6, 12, RngSeed(seed));
                    let oracle = SampleOracle::new(w, RngSeed(100 + seed));
                    shallow_learn(&oracle, &ShallowLearnOptions::new(2, n, n)).unwrap().report.suboptimality
                })
                .collect();
            median(&subs)
        })
        .collect();
    let monotone = medians.windows(2).all(|p| p[1] < p[0]);
    verdict(
        9,
        "learning consistency",
        monotone,
        Duration::from_secs(300),
        start,
        format!("median suboptimality {:?}", medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()),
    )
}

fn criterion_10_ordering() -> bool {
    let start = Instant::now();
    let mut against_nkp = 0;
    let mut against_svd = 0;
    for seed in 0..100u64 {
        let w = unit_columns(4, 8, 10_000 + seed);
        let r = 1 + (seed % 2) as usize;
        let ours = exact(&w, &relu_svd(&w, r, DEFAULT_SUBSET_CAP).unwrap().y);
        if ours <= exact(&w, &nkp(&w, r, Activation::Relu).unwrap().y) + 1e-9 {
            against_nkp += 1;
        }
        if ours <= exact(&w, &truncated_svd(&w, r).unwrap()) {
            against_svd += 1;
        }
    }
    let lfai_ok = (0..20u64)
        .into_par_iter()
        .filter(|&seed| {
            let w = unit_columns(4, 8, 20_000 + seed);
            let opts = LfaiOptions {
                seed: RngSeed(seed),
                ..LfaiOptions::default()
            };
            let out = lfai(&w, 2, Activation::Relu, &opts).unwrap();
            let spectral = spectral_init(&w, 2).unwrap().product().unwrap();
            exact(&w, &out.factors.product().unwrap()) <= exact(&w, &spectral)
        })
        .count();
    verdict(
        10,
        "ordering",
        against_nkp == 100 && against_svd == 100 && lfai_ok == 20,
        Duration::from_secs(600),
        start,
        format!(
            "relu_svd <= nkp on {against_nkp}/100, <= truncated SVD on {against_svd}/100, lfai-ws <= spectral on {lfai_ok}/20"
        ),
    )
}

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_nlra")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_11_determinism_and_davis_kahan() -> bool {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    nlra_cli::matrix_file::save_matrix(dir.path().join("w.txt").as_path(), &unit_columns(4, 8, 1)).unwrap();

    let mut identical = true;
    for _ in 0..2 {
        let sweep = |out: &str| {
            let stdout = run_cli(&[
                "--no-timing", "gap-sweep", "--dims", "20,40", "--rank-scales", "0.1,0.2", "--trials", "3",
                "--seed", "5", "--output", out,
            ]);
            (stdout, std::fs::read(out).unwrap())
        };
        identical &= sweep(&path("a.csv")) == sweep(&path("a.csv"));
        for method in ["relu-svd", "nkp", "lfai-ws"] {
            let approx = |y: &str| {
                let stdout = run_cli(&[
                    "--no-timing", "approx", "--input", &path("w.txt"), "--rank", "2", "--method", method,
                    "--seed", "3", "--mc-samples", "5000", "--output-y", y,
                ]);
                (stdout, std::fs::read(y).unwrap())
            };
            identical &= approx(&path("y.txt")) == approx(&path("y.txt"));
        }
        let learn = || {
            run_cli(&[
                "--no-timing", "learn", "--d", "4", "--m", "6", "--rank", "2", "--n-w", "2000", "--n-k", "2000",
                "--seed", "8",
            ])
        };
        identical &= learn() == learn();
    }

    let mut dk_holds = 0;
    for trial in 0..100u64 {
        let m = 6;
        let a = gaussian(m, m, 40_000 + trial);
        let k = KernelMatrix::new(a.matmul_transpose(&a).unwrap()).unwrap();
        let h = gaussian(m, m, 50_000 + trial);
        let h = h.add(&h.transpose()).unwrap();
        let size = 10f64.powi(-1 - (trial % 4) as i32);
        let h = h.scaled(size / h.frobenius_norm());
        let k_est = KernelMatrix::new(k.as_matrix().add(&h).unwrap()).unwrap();
        let (lhs, rhs) = davis_kahan_check(&k, &k_est, 1 + (trial % 5) as usize).unwrap();
        if lhs <= rhs {
            dk_holds += 1;
        }
    }
    verdict(
        11,
        "determinism and Davis-Kahan",
        identical && dk_holds == 100,
        Duration::from_secs(120),
        start,
        format!("byte-identical outputs: {identical}, Davis-Kahan holds on {dk_holds}/100"),
    )
}

fn main() {
    let criteria: [fn() -> bool; 11] = [
        criterion_01_sqrt_h_fidelity,
        criterion_02_kernel_correctness,
        criterion_03_relu_svd_optimality,
        criterion_04_gap_identity,
        criterion_05_gap_growth_figure,
        criterion_06_mean_rho_figure,
        criterion_07_kernel_estimator_rate,
        criterion_08_realizable_recovery,
        criterion_09_learning_consistency,
        criterion_10_ordering,
        criterion_11_determinism_and_davis_kahan,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
