//! Batch front-end: config-driven simulation, fitting, tuning,
//! benchmarking, and process optimization.
//!
//! Each run reads one JSON config document; command-line flags override
//! the corresponding config keys (flag > config > built-in default). Every
//! run writes a manifest recording the resolved seed, a hash of the
//! resolved configuration, and the library version, so outputs are
//! reproducible byte for byte from (config, seed) on one platform.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 infeasible
//! optimization.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use tenreg_core::basis::BasisSet;
use tenreg_core::cov::{CovModel, Grid, Sigma3};
use tenreg_core::error::Error as CoreError;
use tenreg_core::hetero::{fit_hetero, HeteroEstimator};
use tenreg_core::io as tio;
use tenreg_core::procopt::{solve_qp, sweep_sigma0, OptProblem};
use tenreg_core::regress::{
    fit_gls, fit_lr, fit_otdr, fit_rtr, fit_tdr, fit_vpcr, predict, DesignMatrix, FitResult,
    OtdrOptions, TuningRecord,
};
use tenreg_core::simgen::{
    gen_case1, gen_case1_test, gen_case2, run_benchmark, BenchCase, EstimatorSpec, NoiseSetting,
};
use tenreg_core::tensor::{Matrix, Tensor3, Vector};
use tenreg_core::tuning::{select_lambda, select_otdr_params_on, TuningGrid};

#[derive(Parser)]
#[command(name = "tenreg", version, about = "Tensor regression for structured point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic point-cloud data sets.
    Simulate(CommonArgs),
    /// Fit an estimator to tensors on disk.
    Fit(FitArgs),
    /// Select tuning parameters (GCV lambda or BIC covariance/ranks).
    Tune(CommonArgs),
    /// Replicated estimator comparison table.
    Benchmark(BenchmarkArgs),
    /// Solve the process-setting quadratic program.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Response tensor path (overrides `fit.y`).
    #[arg(long)]
    y: Option<PathBuf>,
    /// Design matrix CSV path (overrides `fit.x`).
    #[arg(long)]
    x: Option<PathBuf>,
    /// Estimator by name for the simple paths: `lr` or `gls`.
    #[arg(long)]
    estimator: Option<String>,
    /// Wrap the estimator in the heteroscedastic variance loop.
    #[arg(long)]
    hetero: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Replication count (overrides `benchmark.n_reps`).
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fit directory holding coef.t3f and meta.json (overrides `optimize.fit`).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Target radius (overrides `optimize.target`).
    #[arg(long)]
    target: Option<f64>,
    /// Variance cap: a number or `sweep:<start>:<stop>:<n>` (log-spaced).
    #[arg(long)]
    sigma0: Option<String>,
    /// Bounds as `l1,l2,...;u1,u2,...` (overrides `optimize.bounds`).
    #[arg(long)]
    bounds: Option<String>,
}

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    /// Worker threads for replications; 0 or absent uses all cores.
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    simulate: Option<SimulateConfig>,
    #[serde(default)]
    fit: Option<FitConfig>,
    #[serde(default)]
    tune: Option<TuneConfig>,
    #[serde(default)]
    benchmark: Option<BenchmarkConfig>,
    #[serde(default)]
    optimize: Option<OptimizeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    case: BenchCase,
    /// Case-1 test draw size written alongside the training data.
    #[serde(default)]
    n_test: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum CovConfig {
    Iid,
    Kron {
        theta: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        angular_mode1: bool,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for CovConfig {
    fn default() -> Self {
        CovConfig::Iid
    }
}

impl CovConfig {
    fn build(&self, i1: usize, i2: usize) -> Result<CovModel, CoreError> {
        match self {
            CovConfig::Iid => CovModel::iid(i1, i2, Sigma3::unit()),
            CovConfig::Kron {
                theta,
                sigma,
                angular_mode1,
            } => {
                let grid1 = if *angular_mode1 {
                    Grid::angular(i1)
                } else {
                    Grid::uniform(i1)
                };
                CovModel::gaussian(grid1, Grid::uniform(i2), *theta, Sigma3::Scalar(sigma * sigma))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
enum FitEstimator {
    Gls,
    Lr,
    Rtr {
        #[serde(default = "default_knots")]
        n_knots: usize,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        periodic_mode1: bool,
    },
    Otdr {
        p1: usize,
        p2: usize,
    },
    Tdr {
        p1: usize,
        p2: usize,
    },
    Vpcr {
        #[serde(default)]
        components: Option<usize>,
    },
}

fn default_knots() -> usize {
    20
}

impl FitEstimator {
    fn label(&self) -> &'static str {
        match self {
            FitEstimator::Gls => "gls",
            FitEstimator::Lr => "lr",
            FitEstimator::Rtr { .. } => "rtr",
            FitEstimator::Otdr { .. } => "otdr",
            FitEstimator::Tdr { .. } => "tdr",
            FitEstimator::Vpcr { .. } => "vpcr",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    y: PathBuf,
    x: PathBuf,
    estimator: FitEstimator,
    #[serde(default)]
    cov: CovConfig,
    #[serde(default)]
    hetero: bool,
    #[serde(default = "default_max_outer")]
    hetero_max_outer: usize,
}

fn default_max_outer() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum TuneTarget {
    /// GCV over the lambda grid for the penalized spline fit.
    Lambda {
        #[serde(default = "default_knots")]
        n_knots: usize,
        #[serde(default)]
        periodic_mode1: bool,
        #[serde(default)]
        cov: CovConfig,
    },
    /// BIC over (theta, sigma, P1, P2) for the decomposition fit.
    Otdr {
        #[serde(default)]
        angular_mode1: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneConfig {
    y: PathBuf,
    x: PathBuf,
    target: TuneTarget,
    #[serde(default)]
    grid: Option<TuningGrid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkConfig {
    case: BenchCase,
    estimators: Vec<EstimatorSpec>,
    settings: Vec<NoiseSetting>,
    #[serde(default = "default_reps")]
    n_reps: usize,
}

fn default_reps() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeConfig {
    fit: PathBuf,
    target: f64,
    /// Either a single value or a sweep `{"sweep": [start, stop, n]}`.
    sigma0: Sigma0Spec,
    bounds: BoundsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Sigma0Spec {
    Single(f64),
    Sweep { sweep: (f64, f64, usize) },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsConfig {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    library_version: String,
    files: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    resolved_config: &impl Serialize,
    seed: Option<u64>,
    files: &[String],
) -> Result<(), CoreError> {
    let canonical =
        serde_json::to_string(resolved_config).map_err(|e| CoreError::Format(e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: format!("{:x}", hasher.finalize()),
        seed,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        files: files.to_vec(),
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| CoreError::Format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

fn load_config(path: &Path) -> Result<ConfigFile, CoreError> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| CoreError::Format(format!("config: {e}")))
}

fn resolve_out_dir(common: &CommonArgs, cfg: &ConfigFile) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tenreg-out"))
}

fn init_thread_pool(cfg: &ConfigFile) {
    if let Some(n) = cfg.parallelism {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn cmd_simulate(args: &CommonArgs) -> Result<(), CoreError> {
    let cfg = load_config(&args.config)?;
    init_thread_pool(&cfg);
    let sim = cfg
        .simulate
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("config has no `simulate` record".into()))?;
    let out = resolve_out_dir(args, &cfg);
    std::fs::create_dir_all(&out)?;
    let seed = args.seed.or(cfg.seed);
    let mut files = Vec::new();
    let mut resolved = sim.clone();
    match &mut resolved.case {
        BenchCase::Case1(spec) => {
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (y, x, truth) = gen_case1(spec)?;
            let n_test = resolved.n_test.unwrap_or(spec.n);
            let (x_test, y_test) = gen_case1_test(spec, n_test)?;
            for (name, tensor) in [("y.t3f", &y), ("truth.t3f", &truth), ("y_test.t3f", &y_test)] {
                tio::write_t3f(out.join(name), tensor)?;
                files.push(name.to_string());
            }
            tio::write_matrix_csv(out.join("x.csv"), x.matrix())?;
            tio::write_matrix_csv(out.join("x_test.csv"), x_test.matrix())?;
            files.push("x.csv".into());
            files.push("x_test.csv".into());
        }
        BenchCase::Case2(spec) => {
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(n) = resolved.n_test {
                spec.n_test = n;
            }
            let (y, x, y_test, x_test) = gen_case2(spec)?;
            tio::write_t3f(out.join("y_train.t3f"), &y)?;
            tio::write_matrix_csv(out.join("x_train.csv"), x.matrix())?;
            tio::write_t3f(out.join("y_test.t3f"), &y_test)?;
            tio::write_matrix_csv(out.join("x_test.csv"), x_test.matrix())?;
            files.extend(
                ["y_train.t3f", "x_train.csv", "y_test.t3f", "x_test.csv"]
                    .map(String::from),
            );
        }
    }
    write_manifest(&out, "simulate", &resolved, seed, &files)?;
    println!("simulate: wrote {} files to {}", files.len() + 1, out.display());
    Ok(())
}

/// Runs the configured estimator; returns the fit plus optional variance
/// model and mean surface (heteroscedastic path).
fn run_fit(
    fit_cfg: &FitConfig,
    y: &Tensor3,
    x: &DesignMatrix,
) -> Result<(FitResult, Option<tenreg_core::hetero::VarianceModel>, Option<Matrix>), CoreError> {
    let (i1, i2, _) = y.dims();
    if fit_cfg.hetero {
        let inner = match &fit_cfg.estimator {
            FitEstimator::Gls | FitEstimator::Lr => HeteroEstimator::Gls,
            FitEstimator::Otdr { p1, p2 } => HeteroEstimator::Otdr { p1: *p1, p2: *p2 },
            FitEstimator::Rtr {
                n_knots, lambda, ..
            } => HeteroEstimator::Rtr {
                n_knots: *n_knots,
                lambda: lambda.unwrap_or(1.0),
            },
            other => {
                return Err(CoreError::InvalidArgument(format!(
                    "estimator {} does not support the heteroscedastic loop",
                    other.label()
                )))
            }
        };
        let h = fit_hetero(y, x, &inner, fit_cfg.hetero_max_outer)?;
        let converged = h.converged;
        let mut fit = h.fit;
        fit.converged = converged;
        return Ok((fit, Some(h.variance), Some(h.mean)));
    }
    let cov = fit_cfg.cov.build(i1, i2)?;
    let identity_result = |coef: Tensor3| -> Result<FitResult, CoreError> {
        FitResult::from_core(
            coef,
            BasisSet::learned(Matrix::identity(i1, i1), Matrix::identity(i2, i2)),
            Vec::new(),
            TuningRecord::default(),
            true,
        )
    };
    let fit = match &fit_cfg.estimator {
        FitEstimator::Gls => identity_result(fit_gls(y, x, &cov)?)?,
        FitEstimator::Lr => identity_result(fit_lr(y, x)?)?,
        FitEstimator::Vpcr { components } => {
            let r = match components {
                Some(r) => *r,
                None => tenreg_core::regress::vpcr_rank_for_variance(y, 0.999)?,
            };
            let v = fit_vpcr(y, x, r)?;
            identity_result(v.coef)?
        }
        FitEstimator::Otdr { p1, p2 } => fit_otdr(y, x, &cov, *p1, *p2, OtdrOptions::default())?,
        FitEstimator::Tdr { p1, p2 } => fit_tdr(y, x, &cov, *p1, *p2)?,
        FitEstimator::Rtr {
            n_knots,
            lambda,
            periodic_mode1,
        } => {
            let basis = BasisSet::bspline_pair(i1, i2, *n_knots, *periodic_mode1)?;
            let lambda = match lambda {
                Some(l) => *l,
                None => select_lambda(y, x, &basis, &TuningGrid::default(), &cov)?.0,
            };
            fit_rtr(y, x, &basis, lambda, &cov)?
        }
    };
    Ok((fit, None, None))
}

fn cmd_fit(args: &FitArgs) -> Result<bool, CoreError> {
    let cfg = load_config(&args.common.config)?;
    init_thread_pool(&cfg);
    let mut fit_cfg = cfg
        .fit
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("config has no `fit` record".into()))?;
    if let Some(y) = &args.y {
        fit_cfg.y = y.clone();
    }
    if let Some(x) = &args.x {
        fit_cfg.x = x.clone();
    }
    if let Some(name) = &args.estimator {
        fit_cfg.estimator = match name.as_str() {
            "lr" => FitEstimator::Lr,
            "gls" => FitEstimator::Gls,
            other => {
                return Err(CoreError::InvalidArgument(format!(
                    "--estimator only accepts `lr` or `gls`; configure `{other}` in the config file"
                )))
            }
        };
    }
    if args.hetero {
        fit_cfg.hetero = true;
    }

    let y = tio::read_t3f(&fit_cfg.y)?;
    let x = DesignMatrix::new(tio::read_matrix_csv(&fit_cfg.x)?)?;
    if x.n_samples() != y.dim(3) {
        return Err(CoreError::DimMismatch {
            context: "response vs design".into(),
            expected: y.dim(3).to_string(),
            found: x.n_samples().to_string(),
        });
    }
    let out = resolve_out_dir(&args.common, &cfg);
    std::fs::create_dir_all(&out)?;
    let (fit, variance, mean) = run_fit(&fit_cfg, &y, &x)?;

    // Training residual, reported for quick diagnostics.
    let yhat = {
        let mut v = predict(&fit.coef, &x)?;
        if let Some(m) = &mean {
            for s in 0..v.dim(3) {
                let slice = v.slice3(s) + m;
                v.set_slice3(s, &slice);
            }
        }
        v
    };
    let rel_resid = (&y - &yhat).frobenius_norm() / y.frobenius_norm().max(1e-300);

    tio::save_fit(&out, &fit, fit_cfg.estimator.label(), variance.as_ref(), mean.as_ref())?;
    let files: Vec<String> = ["core.t3f", "coef.t3f", "u1.t3f", "u2.t3f", "meta.json"]
        .iter()
        .map(|s| s.to_string())
        .chain(mean.is_some().then(|| "mean.t3f".to_string()))
        .collect();
    write_manifest(&out, "fit", &fit_cfg, args.common.seed.or(cfg.seed), &files)?;
    println!(
        "fit: estimator={} converged={} training_relative_residual={rel_resid:.3e}",
        fit_cfg.estimator.label(),
        fit.converged
    );
    Ok(fit.converged)
}

fn cmd_tune(args: &CommonArgs) -> Result<(), CoreError> {
    let cfg = load_config(&args.config)?;
    init_thread_pool(&cfg);
    let tune = cfg
        .tune
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("config has no `tune` record".into()))?;
    let out = resolve_out_dir(args, &cfg);
    std::fs::create_dir_all(&out)?;
    let y = tio::read_t3f(&tune.y)?;
    let x = DesignMatrix::new(tio::read_matrix_csv(&tune.x)?)?;
    let grid = tune.grid.clone().unwrap_or_default();
    let (i1, i2, _) = y.dims();

    let mut wtr = csv::Writer::from_path(out.join("scores.csv"))
        .map_err(|e| CoreError::Format(e.to_string()))?;
    let selection = match &tune.target {
        TuneTarget::Lambda {
            n_knots,
            periodic_mode1,
            cov,
        } => {
            let basis = BasisSet::bspline_pair(i1, i2, *n_knots, *periodic_mode1)?;
            let cov = cov.build(i1, i2)?;
            let (best, scores) = select_lambda(&y, &x, &basis, &grid, &cov)?;
            wtr.write_record(["lambda", "gcv"])
                .map_err(|e| CoreError::Format(e.to_string()))?;
            for (l, s) in grid.lambdas.iter().zip(&scores) {
                wtr.write_record([format!("{l:?}"), format!("{s:?}")])
                    .map_err(|e| CoreError::Format(e.to_string()))?;
            }
            serde_json::json!({ "lambda": best })
        }
        TuneTarget::Otdr { angular_mode1 } => {
            let grid1 = if *angular_mode1 {
                Grid::angular(i1)
            } else {
                Grid::uniform(i1)
            };
            let ((theta, sigma, p1, p2), rows) =
                select_otdr_params_on(&y, &x, &grid, &grid1, &Grid::uniform(i2))?;
            wtr.write_record(["theta", "sigma", "p1", "p2", "bic"])
                .map_err(|e| CoreError::Format(e.to_string()))?;
            for r in &rows {
                wtr.write_record([
                    format!("{:?}", r.theta),
                    format!("{:?}", r.sigma),
                    r.p1.to_string(),
                    r.p2.to_string(),
                    format!("{:?}", r.score),
                ])
                .map_err(|e| CoreError::Format(e.to_string()))?;
            }
            serde_json::json!({ "theta": theta, "sigma": sigma, "p1": p1, "p2": p2 })
        }
    };
    wtr.flush()?;
    std::fs::write(
        out.join("selection.json"),
        serde_json::to_string_pretty(&selection).map_err(|e| CoreError::Format(e.to_string()))?,
    )?;
    write_manifest(
        &out,
        "tune",
        &tune,
        args.seed.or(cfg.seed),
        &["scores.csv".into(), "selection.json".into()],
    )?;
    println!("tune: {selection}");
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), CoreError> {
    let cfg = load_config(&args.common.config)?;
    init_thread_pool(&cfg);
    let mut bench = cfg
        .benchmark
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("config has no `benchmark` record".into()))?;
    if let Some(r) = args.reps {
        bench.n_reps = r;
    }
    let seed = args.common.seed.or(cfg.seed).unwrap_or(1);
    let out = resolve_out_dir(&args.common, &cfg);
    std::fs::create_dir_all(&out)?;
    let rows = run_benchmark(&bench.case, &bench.estimators, &bench.settings, bench.n_reps, seed)?;
    let mut wtr = csv::Writer::from_path(out.join("benchmark.csv"))
        .map_err(|e| CoreError::Format(e.to_string()))?;
    wtr.write_record([
        "case",
        "noise",
        "delta",
        "estimator",
        "mean_sse_pct",
        "std_sse_pct",
        "n_reps",
        "seconds_per_fit",
    ])
    .map_err(|e| CoreError::Format(e.to_string()))?;
    for r in &rows {
        wtr.write_record([
            r.case.clone(),
            r.noise.clone(),
            format!("{:?}", r.delta),
            r.estimator.clone(),
            format!("{:?}", r.mean_sse_pct),
            format!("{:?}", r.std_sse_pct),
            r.n_reps.to_string(),
            format!("{:.6}", r.seconds_per_fit),
        ])
        .map_err(|e| CoreError::Format(e.to_string()))?;
    }
    wtr.flush()?;
    write_manifest(&out, "benchmark", &bench, Some(seed), &["benchmark.csv".into()])?;
    for r in &rows {
        println!(
            "{} {} delta={} {}: mean={:.4e}% std={:.2e} reps={} sec/fit={:.3}",
            r.case, r.noise, r.delta, r.estimator, r.mean_sse_pct, r.std_sse_pct, r.n_reps,
            r.seconds_per_fit
        );
    }
    Ok(())
}

fn parse_sigma0(text: &str) -> Result<Sigma0Spec, CoreError> {
    if let Some(rest) = text.strip_prefix("sweep:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(CoreError::InvalidArgument(
                "sweep spec is sweep:<start>:<stop>:<n>".into(),
            ));
        }
        let start: f64 = parts[0]
            .parse()
            .map_err(|_| CoreError::InvalidArgument("bad sweep start".into()))?;
        let stop: f64 = parts[1]
            .parse()
            .map_err(|_| CoreError::InvalidArgument("bad sweep stop".into()))?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| CoreError::InvalidArgument("bad sweep count".into()))?;
        Ok(Sigma0Spec::Sweep {
            sweep: (start, stop, n),
        })
    } else {
        let v: f64 = text
            .parse()
            .map_err(|_| CoreError::InvalidArgument("bad sigma0 value".into()))?;
        Ok(Sigma0Spec::Single(v))
    }
}

fn parse_bounds(text: &str) -> Result<BoundsConfig, CoreError> {
    let halves: Vec<&str> = text.split(';').collect();
    if halves.len() != 2 {
        return Err(CoreError::InvalidArgument(
            "bounds are `l1,l2,...;u1,u2,...`".into(),
        ));
    }
    let parse = |s: &str| -> Result<Vec<f64>, CoreError> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CoreError::InvalidArgument(format!("bad bound `{v}`")))
            })
            .collect()
    };
    Ok(BoundsConfig {
        lower: parse(halves[0])?,
        upper: parse(halves[1])?,
    })
}

fn sigma0_grid(spec: &Sigma0Spec) -> Result<Vec<f64>, CoreError> {
    match spec {
        Sigma0Spec::Single(v) => Ok(vec![*v]),
        Sigma0Spec::Sweep {
            sweep: (start, stop, n),
        } => {
            if *n < 2 || !(start > &0.0) || stop <= start {
                return Err(CoreError::InvalidArgument(
                    "sweep needs 0 < start < stop and n >= 2".into(),
                ));
            }
            let (l0, l1) = (start.ln(), stop.ln());
            Ok((0..*n)
                .map(|i| (l0 + (l1 - l0) * i as f64 / (*n - 1) as f64).exp())
                .collect())
        }
    }
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<bool, CoreError> {
    let cfg = load_config(&args.common.config)?;
    init_thread_pool(&cfg);
    let mut opt = cfg
        .optimize
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("config has no `optimize` record".into()))?;
    if let Some(f) = &args.fit {
        opt.fit = f.clone();
    }
    if let Some(t) = args.target {
        opt.target = t;
    }
    if let Some(s) = &args.sigma0 {
        opt.sigma0 = parse_sigma0(s)?;
    }
    if let Some(b) = &args.bounds {
        opt.bounds = parse_bounds(b)?;
    }
    let out = resolve_out_dir(&args.common, &cfg);
    std::fs::create_dir_all(&out)?;

    let (coef, meta, mean) = tio::load_fit(&opt.fit)?;
    let variance = meta.variance.clone().ok_or_else(|| {
        CoreError::InvalidArgument(
            "fit has no variance model; run `fit --hetero` before optimizing".into(),
        )
    })?;
    let d = coef.dim(3) - 1;
    if opt.bounds.lower.len() != d || opt.bounds.upper.len() != d {
        return Err(CoreError::DimMismatch {
            context: "bounds".into(),
            expected: d.to_string(),
            found: opt.bounds.lower.len().to_string(),
        });
    }
    // With a heteroscedastic fit the coefficient tensor describes centered
    // responses; the saved mean surface completes the prediction.
    let mut full_coef = coef.clone();
    if let Some(m) = &mean {
        full_coef.set_slice3(0, &(full_coef.slice3(0) + m));
    }
    let problem = OptProblem::from_coef(
        &full_coef,
        variance,
        opt.target,
        match &opt.sigma0 {
            Sigma0Spec::Single(v) => *v,
            Sigma0Spec::Sweep { sweep } => sweep.0,
        },
        Vector::from_vec(opt.bounds.lower.clone()),
        Vector::from_vec(opt.bounds.upper.clone()),
    )?;

    match &opt.sigma0 {
        Sigma0Spec::Single(_) => {
            let solution = solve_qp(&problem)?; // Infeasible maps to exit 3
            let json = serde_json::to_string_pretty(&solution)
                .map_err(|e| CoreError::Format(e.to_string()))?;
            std::fs::write(out.join("result.json"), json)?;
            write_manifest(&out, "optimize", &opt, args.common.seed.or(cfg.seed), &[
                "result.json".into(),
            ])?;
            println!(
                "optimize: x*={:?} objective={:.6e} active={:?}",
                solution.x, solution.objective, solution.active_constraints
            );
            Ok(true)
        }
        Sigma0Spec::Sweep { .. } => {
            let grid = sigma0_grid(&opt.sigma0)?;
            let sweep = sweep_sigma0(&problem, &grid)?;
            let mut wtr = csv::Writer::from_path(out.join("sweep.csv"))
                .map_err(|e| CoreError::Format(e.to_string()))?;
            let d = problem.a3.ncols();
            let mut header = vec!["sigma0".to_string(), "feasible".to_string()];
            header.extend((0..d).map(|j| format!("x{j}")));
            header.push("objective".into());
            header.push("min_variance".into());
            wtr.write_record(&header)
                .map_err(|e| CoreError::Format(e.to_string()))?;
            let mut any_feasible = false;
            for p in &sweep {
                let mut rec = vec![format!("{:?}", p.sigma0), p.feasible.to_string()];
                match &p.solution {
                    Some(sol) => {
                        any_feasible = true;
                        rec.extend(sol.x.iter().map(|v| format!("{v:?}")));
                        rec.push(format!("{:?}", sol.objective));
                        rec.push(String::new());
                    }
                    None => {
                        rec.extend(std::iter::repeat(String::new()).take(d + 1));
                        rec.push(format!("{:?}", p.min_variance.unwrap_or(f64::NAN)));
                    }
                }
                wtr.write_record(&rec)
                    .map_err(|e| CoreError::Format(e.to_string()))?;
            }
            wtr.flush()?;
            write_manifest(&out, "optimize", &opt, args.common.seed.or(cfg.seed), &[
                "sweep.csv".into(),
            ])?;
            println!(
                "optimize: swept {} sigma0 values ({} feasible)",
                sweep.len(),
                sweep.iter().filter(|p| p.feasible).count()
            );
            if !any_feasible {
                return Err(CoreError::Infeasible {
                    min_variance: problem.min_achievable_variance(),
                });
            }
            Ok(true)
        }
    }
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::NonConvergence { .. } => 2,
        CoreError::Infeasible { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<bool, CoreError> = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args).map(|_| true),
        Command::Fit(args) => cmd_fit(args),
        Command::Tune(args) => cmd_tune(args).map(|_| true),
        Command::Benchmark(args) => cmd_benchmark(args).map(|_| true),
        Command::Optimize(args) => cmd_optimize(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        // Completed but flagged (e.g. iteration cap reached).
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
