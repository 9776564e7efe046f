//! Estimators linking a tensor response to scalar inputs.
//!
//! All five fitters share the model `Y = B x1 U1 x2 U2 x3 X + noise` and
//! differ in where the bases come from: nowhere (GLS on the full grid),
//! fixed bases (projected / penalized closed forms), or learned from data
//! (the alternating decomposition fits and the PCA / entrywise baselines).

mod closed_form;
mod decomp;
mod vpcr;

pub use closed_form::{fit_gls, fit_lr, fit_projected, fit_rtr};
pub use decomp::{fit_otdr, fit_tdr, OtdrOptions};
pub use vpcr::{fit_vpcr, vpcr_rank_for_variance, VpcrFit};

use crate::basis::BasisSet;
use crate::cov::CovModel;
use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::tensor::{Matrix, Tensor3};

/// The `N x p` input matrix. The standard constructors require a leading
/// intercept column of ones and full column rank; `from_weighted` admits
/// row-rescaled designs (used by the heteroscedastic loop) where the
/// intercept column is no longer constant.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: Matrix,
}

impl DesignMatrix {
    pub fn new(x: Matrix) -> Result<Self> {
        if x.column(0).iter().any(|v| (v - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidArgument(
                "design matrix must have an all-ones first column".into(),
            ));
        }
        Self::from_weighted(x)
    }

    /// Prepends the intercept column to a raw feature matrix.
    pub fn with_intercept(features: &Matrix) -> Result<Self> {
        let n = features.nrows();
        let mut x = Matrix::zeros(n, features.ncols() + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 0..features.ncols() {
                x[(i, j + 1)] = features[(i, j)];
            }
        }
        Self::from_weighted(x)
    }

    /// Skips the intercept check (row-rescaled designs). Rank and sample
    /// count are fitting-time requirements, not container invariants:
    /// prediction designs may have fewer rows than columns.
    pub fn from_weighted(x: Matrix) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty design matrix".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        Ok(DesignMatrix { x })
    }

    /// Fitting precondition: `N >= p` and full column rank.
    pub fn check_full_rank(&self) -> Result<()> {
        if self.x.nrows() < self.x.ncols() {
            return Err(Error::dims(
                "design matrix",
                format!("at least {} rows", self.x.ncols()),
                self.x.nrows(),
            ));
        }
        let svd = self.x.clone().svd(false, false);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        if min <= 1e-10 * max {
            return Err(Error::Singular("design matrix is rank deficient".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.x.ncols()
    }
}

/// Tuning values a fit was produced under, echoed into result sidecars.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TuningRecord {
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub ranks: Option<(usize, usize)>,
}

/// A fitted tensor regression: core `B` (P1 x P2 x p), the bases used, and
/// the reconstructed coefficient `A = B x1 U1 x2 U2` (I1 x I2 x p).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub core: Tensor3,
    pub basis: BasisSet,
    pub coef: Tensor3,
    pub objective_trace: Vec<f64>,
    pub tuning: TuningRecord,
    pub converged: bool,
}

impl FitResult {
    /// Builds a result from a core tensor and bases, reconstructing the
    /// coefficient tensor so the two always agree.
    pub fn from_core(
        core: Tensor3,
        basis: BasisSet,
        objective_trace: Vec<f64>,
        tuning: TuningRecord,
        converged: bool,
    ) -> Result<Self> {
        let coef = core
            .mode_product(&basis.u1, 1)?
            .mode_product(&basis.u2, 2)?;
        Ok(FitResult {
            core,
            basis,
            coef,
            objective_trace,
            tuning,
            converged,
        })
    }

    pub fn predict(&self, xnew: &DesignMatrix) -> Result<Tensor3> {
        predict(&self.coef, xnew)
    }
}

/// Prediction `Yhat = A x3 Xnew`.
pub fn predict(coef: &Tensor3, xnew: &DesignMatrix) -> Result<Tensor3> {
    if xnew.n_coefficients() != coef.dim(3) {
        return Err(Error::dims(
            "predict",
            format!("{} input columns", coef.dim(3)),
            xnew.n_coefficients(),
        ));
    }
    coef.mode_product(xnew.matrix(), 3)
}

/// `(X^T Sigma3^{-1} X)^{-1} X^T Sigma3^{-1}`, the sample-mode projector
/// shared by every closed form.
pub(crate) fn sample_projector(x: &DesignMatrix, cov: &CovModel) -> Result<Matrix> {
    let n = x.n_samples();
    let variances = cov.sigma3.variances(n)?;
    let mut weighted = x.matrix().transpose(); // p x N
    for (i, v) in variances.iter().enumerate() {
        let mut col = weighted.column_mut(i);
        col /= *v;
    }
    let gram = &weighted * x.matrix();
    let (values, _) = sym_eig(&gram);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 1e-12 * max || max == 0.0 {
        return Err(Error::Singular("X^T Sigma3^{-1} X".into()));
    }
    crate::linalg::sym_solve(&gram, &weighted)
}

/// `(U^T Sigma^{-1} U + lambda P)^{-1} U^T Sigma^{-1}` for one spatial mode.
pub(crate) fn basis_projector(
    u: &Matrix,
    sigma: &crate::cov::SpdFactors,
    lambda: f64,
    penalty: Option<&Matrix>,
) -> Result<Matrix> {
    if u.nrows() != sigma.dim() {
        return Err(Error::dims("basis projector", sigma.dim(), u.nrows()));
    }
    let ut_sinv = u.transpose() * &sigma.inverse; // P x I
    let mut gram = &ut_sinv * u;
    if let Some(p) = penalty {
        gram += p * lambda;
    }
    let (values, _) = sym_eig(&gram);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 1e-12 * max || max == 0.0 {
        return Err(Error::Singular(
            "projected Gram U^T Sigma^{-1} U is rank deficient".into(),
        ));
    }
    crate::linalg::sym_solve(&gram, &ut_sinv)
}

pub(crate) fn check_response(y: &Tensor3, x: &DesignMatrix, cov: &CovModel) -> Result<()> {
    let (i1, i2, n) = y.dims();
    if x.n_samples() != n {
        return Err(Error::dims("response vs design", n, x.n_samples()));
    }
    let (c1, c2) = cov.spatial_dims();
    if (c1, c2) != (i1, i2) {
        return Err(Error::dims(
            "response vs covariance",
            format!("{i1}x{i2}"),
            format!("{c1}x{c2}"),
        ));
    }
    Ok(())
}
