//! Tuning parameter selection: GCV for the penalty weight of the
//! penalized fit, BIC for the covariance parameters and ranks of the
//! decomposition fit.
//!
//! The GCV formula uses the unweighted Grams `U'U` exactly as specified,
//! even when the fit itself is covariance-weighted.

use crate::basis::BasisSet;
use crate::cov::{CovModel, Grid, Sigma3};
use crate::error::{Error, Result};
use crate::regress::{fit_otdr, fit_rtr, DesignMatrix, OtdrOptions};
use crate::tensor::Tensor3;

/// Search space for the selectors. Each axis must be nonempty and sorted
/// ascending; ranks sort lexicographically.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TuningGrid {
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub ranks: Vec<(usize, usize)>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        let lambdas = (0..9).map(|i| 10f64.powi(i - 4)).collect();
        let ranks = (1..=5)
            .flat_map(|p1| (1..=5).map(move |p2| (p1, p2)))
            .collect();
        TuningGrid {
            lambdas,
            thetas: vec![1.0, 5.0, 10.0, 20.0, 50.0],
            sigmas: vec![0.05, 0.1, 0.5, 1.0],
            ranks,
        }
    }
}

impl TuningGrid {
    fn validate_axis(name: &str, axis: &[f64]) -> Result<()> {
        if axis.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {name} grid")));
        }
        if axis.windows(2).any(|w| w[0] >= w[1]) || axis.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "{name} grid must be positive and strictly ascending"
            )));
        }
        Ok(())
    }

    pub fn validate_lambdas(&self) -> Result<()> {
        Self::validate_axis("lambda", &self.lambdas)
    }

    pub fn validate_otdr(&self) -> Result<()> {
        Self::validate_axis("theta", &self.thetas)?;
        Self::validate_axis("sigma", &self.sigmas)?;
        if self.ranks.is_empty() {
            return Err(Error::InvalidArgument("empty rank grid".into()));
        }
        if self.ranks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "rank grid must be strictly ascending lexicographically".into(),
            ));
        }
        Ok(())
    }
}

/// Effective degrees of freedom `tr(U (U'U + lambda P)^{-1} U')`.
fn hat_trace(u: &crate::tensor::Matrix, penalty: &crate::tensor::Matrix, lambda: f64) -> Result<f64> {
    let gram = u.transpose() * u;
    let solved = crate::linalg::sym_solve(&(&gram + penalty * lambda), &gram)?;
    Ok(solved.trace())
}

/// Generalized cross validation score of the penalized fit at `lambda`:
/// mean squared training residual over the squared complexity factor
/// `(1 - tr(H1) tr(H2) tr(H3) / N)^2`; infinite when the trace product
/// reaches `N` (model too complex for the sample size).
pub fn gcv_score(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    lambda: f64,
    cov: &CovModel,
) -> Result<f64> {
    let (p1, p2) = match (&basis.penalty1, &basis.penalty2) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(
                "GCV needs penalty matrices on both modes".into(),
            ))
        }
    };
    let n = y.dim(3) as f64;
    let fit = fit_rtr(y, x, basis, lambda, cov)?;
    let resid = y - &fit.predict(x)?;
    let numerator = resid.frobenius_norm().powi(2) / n;

    let tr1 = hat_trace(&basis.u1, p1, lambda)?;
    let tr2 = hat_trace(&basis.u2, p2, lambda)?;
    let xm = x.matrix();
    let tr3 = crate::linalg::sym_solve(&(xm.transpose() * xm), &(xm.transpose() * xm))?.trace();
    let complexity = 1.0 - tr1 * tr2 * tr3 / n;
    if complexity <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(numerator / (complexity * complexity))
}

/// Grid argmin of [`gcv_score`]; ties resolve to the smallest `lambda`.
pub fn select_lambda(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    grid: &TuningGrid,
    cov: &CovModel,
) -> Result<(f64, Vec<f64>)> {
    grid.validate_lambdas()?;
    let mut scores = Vec::with_capacity(grid.lambdas.len());
    let mut best = (grid.lambdas[0], f64::INFINITY);
    for &lambda in &grid.lambdas {
        let score = gcv_score(y, x, basis, lambda, cov)?;
        if score < best.1 {
            best = (lambda, score);
        }
        scores.push(score);
    }
    Ok((best.0, scores))
}

/// BIC from a precomputed residual quadratic form.
pub fn bic_from_quadform(quadform: f64, n: usize, p: usize, p1: usize, p2: usize) -> f64 {
    let n_f = n as f64;
    n_f * (quadform / n_f).max(1e-300).ln() + ((p1 + p2) * p) as f64 * n_f.ln()
}

/// BIC of the decomposition fit at one covariance/rank setting, with
/// explicit mode grids (angular mode-1 grids keep the kernel periodic).
pub fn bic_score_on(
    y: &Tensor3,
    x: &DesignMatrix,
    grid1: &Grid,
    grid2: &Grid,
    theta: f64,
    sigma: f64,
    p1: usize,
    p2: usize,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let cov = CovModel::gaussian(
        grid1.clone(),
        grid2.clone(),
        theta,
        Sigma3::Scalar(sigma * sigma),
    )?;
    let fit = fit_otdr(y, x, &cov, p1, p2, OtdrOptions::default())?;
    let resid = y - &fit.predict(x)?;
    let quadform = cov.whitened_energy(&resid)?;
    Ok(bic_from_quadform(
        quadform,
        y.dim(3),
        x.n_coefficients(),
        p1,
        p2,
    ))
}

/// [`bic_score_on`] with uniform line grids derived from the tensor dims.
pub fn bic_score(
    y: &Tensor3,
    x: &DesignMatrix,
    theta: f64,
    sigma: f64,
    p1: usize,
    p2: usize,
) -> Result<f64> {
    let (i1, i2, _) = y.dims();
    bic_score_on(y, x, &Grid::uniform(i1), &Grid::uniform(i2), theta, sigma, p1, p2)
}

/// One evaluated BIC grid point.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BicRow {
    pub theta: f64,
    pub sigma: f64,
    pub p1: usize,
    pub p2: usize,
    pub score: f64,
}

/// Exhaustive BIC argmin over `(theta, sigma, P1, P2)`. Ties resolve to the
/// first candidate in iteration order: smaller ranks, then smaller theta,
/// then smaller sigma.
pub fn select_otdr_params_on(
    y: &Tensor3,
    x: &DesignMatrix,
    grid: &TuningGrid,
    grid1: &Grid,
    grid2: &Grid,
) -> Result<((f64, f64, usize, usize), Vec<BicRow>)> {
    grid.validate_otdr()?;
    let mut rows = Vec::new();
    let mut best: Option<((f64, f64, usize, usize), f64)> = None;
    for &(p1, p2) in &grid.ranks {
        for &theta in &grid.thetas {
            for &sigma in &grid.sigmas {
                let score = bic_score_on(y, x, grid1, grid2, theta, sigma, p1, p2)?;
                rows.push(BicRow {
                    theta,
                    sigma,
                    p1,
                    p2,
                    score,
                });
                let better = match &best {
                    None => true,
                    Some((_, s)) => score < *s,
                };
                if better {
                    best = Some(((theta, sigma, p1, p2), score));
                }
            }
        }
    }
    Ok((best.expect("validated grid is nonempty").0, rows))
}

/// [`select_otdr_params_on`] with uniform line grids from the tensor dims.
pub fn select_otdr_params(
    y: &Tensor3,
    x: &DesignMatrix,
    grid: &TuningGrid,
) -> Result<((f64, f64, usize, usize), Vec<BicRow>)> {
    let (i1, i2, _) = y.dims();
    select_otdr_params_on(y, x, grid, &Grid::uniform(i1), &Grid::uniform(i2))
}
