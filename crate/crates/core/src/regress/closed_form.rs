//! Closed-form estimators: full-grid GLS, projection onto fixed bases, and
//! the roughness-penalized variant.
//!
//! The penalized solve exploits the separable penalty
//! `(X^T S3i X) ⊗ (l P2 ⊗ U1' S1i U1 + l U2' S2i U2 ⊗ P1 + l^2 P2 ⊗ P1)`,
//! which telescopes the full Kronecker normal equations into independent
//! per-mode solves.

use super::{
    basis_projector, check_response, sample_projector, DesignMatrix, FitResult, TuningRecord,
};
use crate::basis::BasisSet;
use crate::cov::CovModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Unrestricted GLS coefficient `A = Y x3 (X' S3^{-1} X)^{-1} X' S3^{-1}`.
pub fn fit_gls(y: &Tensor3, x: &DesignMatrix, cov: &CovModel) -> Result<Tensor3> {
    check_response(y, x, cov)?;
    let t = sample_projector(x, cov)?;
    y.mode_product(&t, 3)
}

/// Entrywise ordinary least squares; GLS with an identity sample covariance.
pub fn fit_lr(y: &Tensor3, x: &DesignMatrix) -> Result<Tensor3> {
    let (i1, i2, _) = y.dims();
    let cov = CovModel::iid(i1, i2, crate::cov::Sigma3::unit())?;
    fit_gls(y, x, &cov)
}

/// Projection onto fixed bases (closed form): per-mode projectors
/// `(U' S^{-1} U)^{-1} U' S^{-1}` on the spatial modes and the GLS
/// projector on the sample mode.
pub fn fit_projected(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    cov: &CovModel,
) -> Result<FitResult> {
    fit_rtr_inner(y, x, basis, 0.0, cov, false)
}

/// Roughness-penalized regression: adds `lambda P_k` to each spatial Gram.
/// `lambda = 0` reduces to [`fit_projected`].
pub fn fit_rtr(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    lambda: f64,
    cov: &CovModel,
) -> Result<FitResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {lambda}"
        )));
    }
    if basis.penalty1.is_none() || basis.penalty2.is_none() {
        return Err(Error::InvalidArgument(
            "penalized fit requires penalty matrices on both modes".into(),
        ));
    }
    fit_rtr_inner(y, x, basis, lambda, cov, true)
}

fn fit_rtr_inner(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    lambda: f64,
    cov: &CovModel,
    penalized: bool,
) -> Result<FitResult> {
    check_response(y, x, cov)?;
    let (p1, p2) = if penalized {
        (basis.penalty1.as_ref(), basis.penalty2.as_ref())
    } else {
        (None, None)
    };
    let f1 = basis_projector(&basis.u1, cov.sigma1(), lambda, p1)?;
    let f2 = basis_projector(&basis.u2, cov.sigma2(), lambda, p2)?;
    let t = sample_projector(x, cov)?;
    let core = y
        .mode_product(&f1, 1)?
        .mode_product(&f2, 2)?
        .mode_product(&t, 3)?;
    let tuning = TuningRecord {
        lambda: penalized.then_some(lambda),
        theta: cov.theta,
        ..TuningRecord::default()
    };
    FitResult::from_core(core, basis.clone(), Vec::new(), tuning, true)
}
