use std::fmt::Write as _;
use std::time::Instant;

use nlra_core::approx::{relu_svd, FactorPair};
use nlra_core::gap::sample_spherical_w;
use nlra_core::learning::KernelSource;
use nlra_core::{
    estimate_kernel, kernel_matrix, lfai, nkp, risk_mc, risk_relu_exact, shallow_learn,
    spectral_init, spherical_sweep, Activation, DenseMatrix, LfaiOptions, RngSeed, SampleOracle,
    ShallowLearnOptions, SweepConfig, SweepRow,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::matrix_file::{load_matrix, save_matrix, write_atomic};
use crate::{ApproxArgs, GapSweepArgs, KernelArgs, KernelMode, LearnArgs, Method, RiskArgs};

/// JSON report printed by every subcommand.
#[derive(Debug, Serialize)]
pub struct Report {
    pub method: String,
    pub rank: Option<usize>,
    pub risk_exact: Option<f64>,
    pub risk_mc: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
    #[serde(flatten)]
    pub details: Map<String, Value>,
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn start(enabled: bool) -> Self {
        Self {
            start: Instant::now(),
            enabled,
        }
    }

    fn elapsed_ms(&self) -> Option<f64> {
        self.enabled.then(|| self.start.elapsed().as_secs_f64() * 1e3)
    }
}

fn render(report: &Report) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(report)?)
}

const STREAM_LFAI: u64 = 1;
const STREAM_MC: u64 = 2;

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Spectral => "spectral",
        Method::Nkp => "nkp",
        Method::ReluSvd => "relu-svd",
        Method::Lfai => "lfai",
        Method::LfaiWs => "lfai-ws",
    }
}

pub fn approx(args: &ApproxArgs, timing: bool) -> Result<String, CliError> {
    let clock = Clock::start(timing);
    let w = load_matrix(&args.input)?;
    let r = args.rank;
    let seed = RngSeed(args.seed);
    let mut warnings = Vec::new();
    let mut details = Map::new();
    let act = args.activation;

    let (y, factors) = match args.method {
        Method::Spectral => {
            let f = spectral_init(&w, r)?;
            (f.product()?, Some(f))
        }
        Method::Nkp => {
            let out = nkp(&w, r, act)?;
            warnings.extend(out.warnings);
            details.insert("kernel_eigenvalues".into(), json!(out.eigenvalues));
            (out.y, None)
        }
        Method::ReluSvd => {
            if act != Activation::Relu {
                warnings.push(format!("relu-svd targets ReLU; activation {act} is ignored"));
            }
            let out = relu_svd(&w, r, args.subset_cap)?;
            details.insert("mask".into(), json!(out.mask.selected()));
            details.insert("rho".into(), json!(out.rho));
            (out.y, None)
        }
        Method::Lfai | Method::LfaiWs => {
            let opts = LfaiOptions {
                step_size: args.step_size,
                batch_size: args.batch_size,
                max_epochs: args.epochs,
                steps_per_epoch: args.steps_per_epoch,
                warm_start: args.method == Method::LfaiWs,
                seed: seed.derive(&[STREAM_LFAI]),
                ..LfaiOptions::default()
            };
            let out = lfai(&w, r, act, &opts)?;
            details.insert("objective_trace".into(), json!(out.trace));
            let y = out.factors.product()?;
            (y, Some(out.factors))
        }
    };

    save_matrix(&args.output_y, &y)?;
    if let (Some(pu), Some(pv)) = (&args.output_u, &args.output_v) {
        // methods that return Y directly are factored by a rank-r SVD
        let f: FactorPair = match factors {
            Some(f) => f,
            None => spectral_init(&y, r.min(y.rows()).min(y.cols()))?,
        };
        save_matrix(pu, &f.u)?;
        save_matrix(pv, &f.v)?;
    }

    let risk_exact = match act {
        Activation::Relu => Some(risk_relu_exact(&w, &y)?.value),
        _ => None,
    };
    let risk_mc_value = match args.mc_samples {
        Some(n) => {
            let rep = risk_mc(&w, &y, act, n, seed.derive(&[STREAM_MC]))?;
            details.insert("risk_mc_std_error".into(), json!(rep.std_error));
            Some(rep.value)
        }
        None => None,
    };
    details.insert("activation".into(), json!(act.to_string()));
    render(&Report {
        method: method_name(args.method).into(),
        rank: Some(r),
        risk_exact,
        risk_mc: risk_mc_value,
        wall_time_ms: clock.elapsed_ms(),
        seed: args.seed,
        warnings,
        details,
    })
}

pub const CSV_HEADER: &str = "n,d,m,r,trial,mean_rho,max_rho,gap_bound";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.9e},{:.9e},{:.9e}",
            row.n, row.d, row.m, row.r, row.trial, row.mean_rho, row.max_rho, row.gap_bound
        );
    }
    out
}

pub fn gap_sweep(args: &GapSweepArgs, timing: bool) -> Result<String, CliError> {
    let clock = Clock::start(timing);
    let cfg = SweepConfig {
        dims: args.dims.0.clone(),
        rank_scales: args.rank_scales.0.clone(),
        dim_fraction: args.dim_fraction,
        width_exponent: args.width_exponent,
        width_coeff: args.width_coeff,
        trials: args.trials,
        seed: RngSeed(args.seed),
    };
    let rows = spherical_sweep(&cfg)?;
    write_atomic(&args.output, &sweep_csv(&rows))?;
    let mut details = Map::new();
    details.insert("rows".into(), json!(rows.len()));
    details.insert("output".into(), json!(args.output.display().to_string()));
    let mut warnings = Vec::new();
    for &n in &cfg.dims {
        for &s in &cfg.rank_scales {
            if cfg.cell_shape(n, s).is_none() {
                warnings.push(format!("skipped infeasible cell n = {n}, scale = {s}"));
            }
        }
    }
    render(&Report {
        method: "gap-sweep".into(),
        rank: None,
        risk_exact: None,
        risk_mc: None,
        wall_time_ms: clock.elapsed_ms(),
        seed: args.seed,
        warnings,
        details,
    })
}

const STREAM_TRUTH: u64 = 1;
const STREAM_ORACLE: u64 = 2;

pub fn learn(args: &LearnArgs, timing: bool) -> Result<String, CliError> {
    let clock = Clock::start(timing);
    if args.d == 0 || args.m == 0 {
        return Err(CliError::Input("d and m must be positive".into()));
    }
    if args.rank == 0 || args.rank > args.d.min(args.m) {
        return Err(CliError::Input(format!(
            "rank {} must lie in 1..={}",
            args.rank,
            args.d.min(args.m)
        )));
    }
    let seed = RngSeed(args.seed);
    let truth = sample_spherical_w(args.d, args.m, seed.derive(&[STREAM_TRUTH]));
    let oracle = SampleOracle::new(truth, seed.derive(&[STREAM_ORACLE]));
    let opts = ShallowLearnOptions {
        r: args.rank,
        n_w: args.n_w,
        n_k: args.n_k,
        radius: args.radius,
        iters: args.iters,
        kernel: match args.kernel {
            KernelMode::Estimated => KernelSource::Estimated,
            KernelMode::ClosedForm => KernelSource::ClosedForm,
        },
    };
    let out = shallow_learn(&oracle, &opts)?;
    let mut details = match serde_json::to_value(&out.report)? {
        Value::Object(map) => map,
        _ => Map::new(),
    };
    details.insert("radius".into(), json!(out.radius));
    details.insert("radius_heuristic".into(), json!(args.radius.is_none()));
    render(&Report {
        method: "shallow-learn".into(),
        rank: Some(args.rank),
        risk_exact: Some(out.report.learned_risk.max(0.0)),
        risk_mc: None,
        wall_time_ms: clock.elapsed_ms(),
        seed: args.seed,
        warnings: out.warnings,
        details,
    })
}

pub fn risk(args: &RiskArgs, timing: bool) -> Result<String, CliError> {
    let clock = Clock::start(timing);
    let w = load_matrix(&args.w)?;
    let y = load_matrix(&args.y)?;
    y.expect_shape(w.shape())?;
    let act = args.activation;
    let risk_exact = match act {
        Activation::Relu => Some(risk_relu_exact(&w, &y)?.value),
        _ => None,
    };
    let mut details = Map::new();
    let samples = match (args.mc_samples, act) {
        (Some(n), _) => Some(n),
        (None, Activation::Relu) => None,
        (None, _) => {
            return Err(CliError::Input(format!(
                "activation {act} has no closed-form risk; pass --mc-samples"
            )))
        }
    };
    let risk_mc_value = match samples {
        Some(n) => {
            let rep = risk_mc(&w, &y, act, n, RngSeed(args.seed))?;
            details.insert("risk_mc_std_error".into(), json!(rep.std_error));
            Some(rep.value)
        }
        None => None,
    };
    details.insert("activation".into(), json!(act.to_string()));
    render(&Report {
        method: "risk".into(),
        rank: None,
        risk_exact,
        risk_mc: risk_mc_value,
        wall_time_ms: clock.elapsed_ms(),
        seed: args.seed,
        warnings: Vec::new(),
        details,
    })
}

pub fn kernel(args: &KernelArgs, timing: bool) -> Result<String, CliError> {
    let clock = Clock::start(timing);
    let w = load_matrix(&args.w)?;
    let act = args.activation;
    let (method, k) = match args.estimate_samples {
        Some(n) => {
            if act != Activation::Relu {
                return Err(CliError::Input(format!(
                    "kernel estimation supports relu only, got {act}"
                )));
            }
            ("kernel-estimated", estimate_kernel(&w, n, RngSeed(args.seed))?)
        }
        None => ("kernel", kernel_matrix(&w, act)?),
    };
    let k: DenseMatrix = k.into_matrix();
    save_matrix(&args.output, &k)?;
    let mut details = Map::new();
    details.insert("activation".into(), json!(act.to_string()));
    details.insert("size".into(), json!(k.rows()));
    details.insert("output".into(), json!(args.output.display().to_string()));
    render(&Report {
        method: method.into(),
        rank: None,
        risk_exact: None,
        risk_mc: None,
        wall_time_ms: clock.elapsed_ms(),
        seed: args.seed,
        warnings: Vec::new(),
        details,
    })
}
