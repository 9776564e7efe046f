//! Synthetic structured point clouds (wave surface and truncated cone), the
//! relative-SSE metric, and the replication benchmark harness.
//!
//! Every generator is keyed by a single seed; independent ChaCha streams
//! separate the training inputs, the training noise, and the test inputs,
//! so train/test draws never share randomness. Replication `r` of a
//! benchmark uses generator seed `seed + r`.

use crate::basis::{sine_basis, BasisSet};
use crate::cov::{sample_tensor_normal_with, CovModel, Grid, Sigma3};
use crate::error::{Error, Result};
use crate::regress::{
    fit_lr, fit_otdr, fit_rtr, fit_tdr, fit_vpcr, predict, vpcr_rank_for_variance, DesignMatrix,
    OtdrOptions,
};
use crate::tensor::{Matrix, Tensor3};
use crate::tuning::{select_lambda, TuningGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Noise structure for the generators: entrywise white noise or the
/// Kronecker-separable spatial kernel with bandwidth `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    Iid,
    Kron { theta: f64 },
}

impl NoiseKind {
    pub fn label(&self) -> String {
        match self {
            NoiseKind::Iid => "iid".to_string(),
            NoiseKind::Kron { theta } => format!("kron(theta={theta})"),
        }
    }
}

const RNG_STREAM_TRAIN_X: u64 = 0;
const RNG_STREAM_TRAIN_NOISE: u64 = 1;
const RNG_STREAM_TEST_X: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Wave-shape surface: rank-(3,3) sine bases with fixed coefficient slices
/// and standard-normal inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case1Spec {
    pub i1: usize,
    pub i2: usize,
    pub n: usize,
    pub b1: [[f64; 3]; 3],
    pub b2: [[f64; 3]; 3],
    pub delta: f64,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl Default for Case1Spec {
    fn default() -> Self {
        Case1Spec {
            i1: 200,
            i2: 200,
            n: 100,
            b1: [[4.0, 1.0, 0.0], [1.0, 0.1, 0.0], [1.0, 0.0, 1.0]],
            b2: [[1.0, 2.0, 0.0], [1.0, 3.0, 0.0], [1.0, 0.0, 0.2]],
            delta: 0.1,
            noise: NoiseKind::Iid,
            seed: 0,
        }
    }
}

impl Case1Spec {
    /// Reduced size for quick runs: 60 x 60 grid, 50 samples.
    pub fn desk_scale() -> Self {
        Case1Spec {
            i1: 60,
            i2: 60,
            n: 50,
            ..Case1Spec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.i1 == 0 || self.i2 == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("empty case-1 dimensions".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidArgument("delta must be nonnegative".into()));
        }
        let finite = self
            .b1
            .iter()
            .chain(self.b2.iter())
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("case-1 coefficient slices".into()));
        }
        Ok(())
    }

    fn noise_cov(&self) -> Result<CovModel> {
        noise_cov(self.noise, Grid::uniform(self.i1), Grid::uniform(self.i2))
    }
}

fn noise_cov(noise: NoiseKind, grid1: Grid, grid2: Grid) -> Result<CovModel> {
    match noise {
        NoiseKind::Iid => CovModel::iid(grid1.len(), grid2.len(), Sigma3::unit()),
        NoiseKind::Kron { theta } => CovModel::gaussian(grid1, grid2, theta, Sigma3::unit()),
    }
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Noiseless wave surface for given raw inputs (one column per input).
fn case1_surface(spec: &Case1Spec, x_raw: &Matrix) -> Result<Tensor3> {
    let u1 = sine_basis(spec.i1, &[1, 2, 3])?;
    let u2 = sine_basis(spec.i2, &[1, 2, 3])?;
    let mut core = Tensor3::zeros((3, 3, 2));
    for a in 0..3 {
        for b in 0..3 {
            core[(a, b, 0)] = spec.b1[a][b];
            core[(a, b, 1)] = spec.b2[a][b];
        }
    }
    core.mode_product(&u1, 1)?
        .mode_product(&u2, 2)?
        .mode_product(x_raw, 3)
}

/// Case-1 training draw: `(Y, X, truth)` with `Y = truth + delta * noise`.
/// The returned design carries an intercept column ahead of the two raw
/// inputs; the generating model has a zero intercept slice.
pub fn gen_case1(spec: &Case1Spec) -> Result<(Tensor3, DesignMatrix, Tensor3)> {
    spec.validate()?;
    let mut x_rng = stream_rng(spec.seed, RNG_STREAM_TRAIN_X);
    let x_raw = standard_normal_matrix(spec.n, 2, &mut x_rng);
    let truth = case1_surface(spec, &x_raw)?;
    let y = if spec.delta > 0.0 {
        let cov = spec.noise_cov()?;
        let mut noise_rng = stream_rng(spec.seed, RNG_STREAM_TRAIN_NOISE);
        let e = sample_tensor_normal_with(&cov, spec.n, &mut noise_rng)?;
        &truth + &e.scale(spec.delta)
    } else {
        truth.clone()
    };
    Ok((y, DesignMatrix::with_intercept(&x_raw)?, truth))
}

/// Fresh noiseless case-1 draw for scoring predictions, on the test stream.
pub fn gen_case1_test(spec: &Case1Spec, n_test: usize) -> Result<(DesignMatrix, Tensor3)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, RNG_STREAM_TEST_X);
    let x_raw = standard_normal_matrix(n_test, 2, &mut rng);
    let truth = case1_surface(spec, &x_raw)?;
    Ok((DesignMatrix::with_intercept(&x_raw)?, truth))
}

/// Nominal truncated-cone parameters (angle, upper radius, eccentricity,
/// side curvature).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeNominal {
    pub theta: f64,
    pub r: f64,
    pub e: f64,
    pub c: f64,
}

impl Default for ConeNominal {
    fn default() -> Self {
        ConeNominal {
            theta: std::f64::consts::PI / 8.0,
            r: 1.3,
            e: 0.3,
            c: 0.5,
        }
    }
}

/// Truncated-cone point clouds on a cylindrical grid, driven by a full
/// factorial over level multipliers of the nominal parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case2Spec {
    pub i1: usize,
    pub i2: usize,
    pub nominal: ConeNominal,
    pub levels: [f64; 3],
    pub delta: f64,
    pub noise: NoiseKind,
    pub seed: u64,
    pub n_test: usize,
}

impl Default for Case2Spec {
    fn default() -> Self {
        Case2Spec {
            i1: 200,
            i2: 200,
            nominal: ConeNominal::default(),
            levels: [0.9, 1.0, 1.1],
            delta: 0.1,
            noise: NoiseKind::Iid,
            seed: 0,
            n_test: 1000,
        }
    }
}

impl Case2Spec {
    /// Reduced size for quick runs: 60 x 60 grid, 200 test cones. The
    /// training size stays at the structural 81 factorial runs.
    pub fn desk_scale() -> Self {
        Case2Spec {
            i1: 60,
            i2: 60,
            n_test: 200,
            ..Case2Spec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.i1 == 0 || self.i2 == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("empty case-2 dimensions".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidArgument("delta must be nonnegative".into()));
        }
        let max_level = self.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(self.nominal.e.abs() * max_level < 1.0) {
            return Err(Error::InvalidArgument(
                "eccentricity must stay below 1 across levels".into(),
            ));
        }
        if !(self.nominal.r > 0.0) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        Ok(())
    }
}

/// Radius of the truncated cone at angle `phi` and height `z`.
pub fn cone_radius(p: &ConeNominal, phi: f64, z: f64) -> f64 {
    (p.r + z * p.theta.tan()) / (1.0 - p.e * p.e * phi.cos().powi(2)).sqrt() + p.c * (z * z - z)
}

/// Regression features `x1 = tan(theta), x2 = r, x3 = e^2, x4 = c`.
fn cone_features(p: &ConeNominal) -> [f64; 4] {
    [p.theta.tan(), p.r, p.e * p.e, p.c]
}

fn cone_surface(spec: &Case2Spec, params: &[ConeNominal]) -> Tensor3 {
    let (i1, i2) = (spec.i1, spec.i2);
    let two_pi = 2.0 * std::f64::consts::PI;
    Tensor3::from_fn((i1, i2, params.len()), |a, b, s| {
        let phi = two_pi * (a + 1) as f64 / i1 as f64;
        let z = (b + 1) as f64 / i2 as f64;
        cone_radius(&params[s], phi, z)
    })
}

fn design_from_cones(params: &[ConeNominal]) -> Result<DesignMatrix> {
    let feats = Matrix::from_fn(params.len(), 4, |i, j| cone_features(&params[i])[j]);
    DesignMatrix::with_intercept(&feats)
}

/// Case-2 draw: 81 factorial training cones (optionally noisy) plus
/// `n_test` noiseless cones with parameters uniform between the lowest and
/// highest design levels.
pub fn gen_case2(spec: &Case2Spec) -> Result<(Tensor3, DesignMatrix, Tensor3, DesignMatrix)> {
    spec.validate()?;
    let nom = &spec.nominal;
    let mut train_params = Vec::with_capacity(81);
    for lt in spec.levels {
        for lr in spec.levels {
            for le in spec.levels {
                for lc in spec.levels {
                    train_params.push(ConeNominal {
                        theta: lt * nom.theta,
                        r: lr * nom.r,
                        e: le * nom.e,
                        c: lc * nom.c,
                    });
                }
            }
        }
    }
    let x_train = design_from_cones(&train_params)?;
    let mut y_train = cone_surface(spec, &train_params);
    if spec.delta > 0.0 {
        let cov = noise_cov(spec.noise, Grid::angular(spec.i1), Grid::uniform(spec.i2))?;
        let mut noise_rng = stream_rng(spec.seed, RNG_STREAM_TRAIN_NOISE);
        let e = sample_tensor_normal_with(&cov, train_params.len(), &mut noise_rng)?;
        y_train = &y_train + &e.scale(spec.delta);
    }

    let lo = spec.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = spec.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut rng = stream_rng(spec.seed, RNG_STREAM_TEST_X);
    let test_params: Vec<ConeNominal> = (0..spec.n_test)
        .map(|_| ConeNominal {
            theta: rng.gen_range(lo..=hi) * nom.theta,
            r: rng.gen_range(lo..=hi) * nom.r,
            e: rng.gen_range(lo..=hi) * nom.e,
            c: rng.gen_range(lo..=hi) * nom.c,
        })
        .collect();
    let x_test = design_from_cones(&test_params)?;
    let y_test = cone_surface(spec, &test_params);
    Ok((y_train, x_train, y_test, x_test))
}

/// Relative sum of squared errors in percent:
/// `100 * ||Y_te - Yhat||^2 / ||Yhat - mean(Yhat)||^2`, the prediction
/// error normalized by the predicted variation across test samples.
pub fn relative_sse(y_test: &Tensor3, y_hat: &Tensor3) -> Result<f64> {
    if y_test.dims() != y_hat.dims() {
        return Err(Error::dims(
            "relative_sse",
            format!("{:?}", y_test.dims()),
            format!("{:?}", y_hat.dims()),
        ));
    }
    let num = (y_test - y_hat).frobenius_norm().powi(2);
    let mean = y_hat.mean_slice3();
    let mut den = 0.0;
    for s in 0..y_hat.dim(3) {
        den += (y_hat.slice3(s) - &mean).norm_squared();
    }
    if den <= f64::MIN_POSITIVE * num.max(1.0) || den == 0.0 {
        return Err(Error::DegeneratePredictions);
    }
    Ok(100.0 * num / den)
}

/// Estimator menu for the benchmark.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// Penalized spline regression; `lambda: None` selects by GCV.
    Rtr {
        #[serde(default = "default_knots")]
        n_knots: usize,
        #[serde(default)]
        lambda: Option<f64>,
    },
    /// One-step decomposition regression at fixed ranks.
    Otdr { p1: usize, p2: usize },
    /// Two-step decomposition baseline at fixed ranks.
    Tdr { p1: usize, p2: usize },
    /// PCA-on-unfolding baseline; `components: None` keeps 99.9% variance.
    Vpcr {
        #[serde(default)]
        components: Option<usize>,
    },
    /// Entrywise least squares.
    Lr,
}

fn default_knots() -> usize {
    20
}

impl EstimatorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorSpec::Rtr { .. } => "rtr",
            EstimatorSpec::Otdr { .. } => "otdr",
            EstimatorSpec::Tdr { .. } => "tdr",
            EstimatorSpec::Vpcr { .. } => "vpcr",
            EstimatorSpec::Lr => "lr",
        }
    }
}

/// One noise configuration of the benchmark table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSetting {
    pub noise: NoiseKind,
    pub delta: f64,
}

/// Which generator a benchmark drives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchCase {
    Case1(Case1Spec),
    Case2(Case2Spec),
}

impl BenchCase {
    fn label(&self) -> &'static str {
        match self {
            BenchCase::Case1(_) => "case1",
            BenchCase::Case2(_) => "case2",
        }
    }
}

/// One line of the benchmark table. `n_reps` counts successful
/// replications; failures are recorded by the deficit.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub noise: String,
    pub delta: f64,
    pub estimator: String,
    pub mean_sse_pct: f64,
    pub std_sse_pct: f64,
    pub n_reps: usize,
    pub seconds_per_fit: f64,
}

/// Fits one estimator on a training draw and returns its prediction on the
/// test design along with the fit time in seconds.
fn fit_and_predict(
    est: &EstimatorSpec,
    y: &Tensor3,
    x: &DesignMatrix,
    cov: &CovModel,
    periodic_mode1: bool,
    x_test: &DesignMatrix,
) -> Result<(Tensor3, f64)> {
    let start = std::time::Instant::now();
    let coef = match est {
        EstimatorSpec::Lr => fit_lr(y, x)?,
        EstimatorSpec::Vpcr { components } => {
            let r = match components {
                Some(r) => *r,
                None => vpcr_rank_for_variance(y, 0.999)?,
            };
            fit_vpcr(y, x, r)?.coef
        }
        EstimatorSpec::Otdr { p1, p2 } => {
            fit_otdr(y, x, cov, *p1, *p2, OtdrOptions::default())?.coef
        }
        EstimatorSpec::Tdr { p1, p2 } => fit_tdr(y, x, cov, *p1, *p2)?.coef,
        EstimatorSpec::Rtr { n_knots, lambda } => {
            let (i1, i2, _) = y.dims();
            let basis = BasisSet::bspline_pair(i1, i2, *n_knots, periodic_mode1)?;
            let lambda = match lambda {
                Some(l) => *l,
                None => {
                    let grid = TuningGrid::default();
                    select_lambda(y, x, &basis, &grid, cov)?.0
                }
            };
            fit_rtr(y, x, &basis, lambda, cov)?.coef
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok((predict(&coef, x_test)?, seconds))
}

/// Runs `n_reps` seeded replications of every estimator under every noise
/// setting and aggregates relative SSEs. Replications run in parallel and
/// are reduced in index order, so the output is independent of scheduling.
pub fn run_benchmark(
    case: &BenchCase,
    estimators: &[EstimatorSpec],
    settings: &[NoiseSetting],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    if estimators.is_empty() || settings.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one estimator and one setting".into(),
        ));
    }
    let mut rows = Vec::new();
    for setting in settings {
        // One replication: Vec of per-estimator outcomes.
        let reps: Vec<Vec<Result<(f64, f64)>>> = (0..n_reps)
            .into_par_iter()
            .map(|r| replicate(case, estimators, setting, seed + r as u64))
            .collect();
        for (e_idx, est) in estimators.iter().enumerate() {
            let mut sses = Vec::new();
            let mut secs = Vec::new();
            for rep in &reps {
                if let Ok((sse, s)) = &rep[e_idx] {
                    sses.push(*sse);
                    secs.push(*s);
                }
            }
            let n_ok = sses.len();
            let mean = if n_ok > 0 {
                sses.iter().sum::<f64>() / n_ok as f64
            } else {
                f64::NAN
            };
            let std = if n_ok > 1 {
                let var = sses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n_ok - 1) as f64;
                var.sqrt()
            } else {
                0.0
            };
            let sec_mean = if n_ok > 0 {
                secs.iter().sum::<f64>() / n_ok as f64
            } else {
                f64::NAN
            };
            rows.push(BenchRow {
                case: case.label().to_string(),
                noise: setting.noise.label(),
                delta: setting.delta,
                estimator: est.label().to_string(),
                mean_sse_pct: mean,
                std_sse_pct: std,
                n_reps: n_ok,
                seconds_per_fit: sec_mean,
            });
        }
    }
    Ok(rows)
}

fn replicate(
    case: &BenchCase,
    estimators: &[EstimatorSpec],
    setting: &NoiseSetting,
    rep_seed: u64,
) -> Vec<Result<(f64, f64)>> {
    let prepared = prepare_replication(case, setting, rep_seed);
    match prepared {
        Err(e) => estimators
            .iter()
            .map(|_| {
                Err(Error::InvalidArgument(format!(
                    "replication setup failed: {e}"
                )))
            })
            .collect(),
        Ok((y, x, y_test, x_test, cov, periodic)) => estimators
            .iter()
            .map(|est| {
                let (y_hat, secs) = fit_and_predict(est, &y, &x, &cov, periodic, &x_test)?;
                Ok((relative_sse(&y_test, &y_hat)?, secs))
            })
            .collect(),
    }
}

type Replication = (Tensor3, DesignMatrix, Tensor3, DesignMatrix, CovModel, bool);

fn prepare_replication(
    case: &BenchCase,
    setting: &NoiseSetting,
    rep_seed: u64,
) -> Result<Replication> {
    match case {
        BenchCase::Case1(base) => {
            let spec = Case1Spec {
                delta: setting.delta,
                noise: setting.noise,
                seed: rep_seed,
                ..base.clone()
            };
            let (y, x, _) = gen_case1(&spec)?;
            let (x_test, y_test) = gen_case1_test(&spec, spec.n)?;
            let cov = spec.noise_cov()?;
            Ok((y, x, y_test, x_test, cov, false))
        }
        BenchCase::Case2(base) => {
            let spec = Case2Spec {
                delta: setting.delta,
                noise: setting.noise,
                seed: rep_seed,
                ..base.clone()
            };
            let (y, x, y_test, x_test) = gen_case2(&spec)?;
            let cov = noise_cov(spec.noise, Grid::angular(spec.i1), Grid::uniform(spec.i2))?;
            Ok((y, x, y_test, x_test, cov, true))
        }
    }
}
