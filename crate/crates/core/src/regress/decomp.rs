//! Basis-learning fits.
//!
//! `fit_otdr` alternates between the two spatial bases, each step keeping
//! `U^(k)' Sigma_k^{-1} U^(k) = I` and maximizing the projected scores norm
//! `|| Y x1 U1' S1i x2 U2' S2i x3 X3' ||^2`, which is equivalent to
//! minimizing the GLS objective at the optimal core. `fit_tdr` is the
//! two-step baseline: plain Tucker/MPCA bases first (ignoring the inputs),
//! then the closed-form core regression.

use super::{
    basis_projector, check_response, sample_projector, DesignMatrix, FitResult, TuningRecord,
};
use crate::basis::BasisSet;
use crate::cov::CovModel;
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, sym_eig, sym_inv_sqrt_mul, top_left_singular_vectors};
use crate::tensor::{Matrix, Tensor3};

#[derive(Debug, Clone, Copy)]
pub struct OtdrOptions {
    pub max_iter: usize,
    /// Relative change of the objective below which the sweep stops.
    pub tol: f64,
}

impl Default for OtdrOptions {
    fn default() -> Self {
        OtdrOptions {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

fn check_ranks(y: &Tensor3, p1: usize, p2: usize) -> Result<()> {
    let (i1, i2, _) = y.dims();
    if p1 == 0 || p1 > i1 || p2 == 0 || p2 > i2 {
        return Err(Error::InvalidArgument(format!(
            "ranks ({p1}, {p2}) out of range for a {i1}x{i2} grid"
        )));
    }
    Ok(())
}

/// `X3` with `X3 X3' = S3i X (X' S3i X)^{-1} X' S3i`, computed as
/// `S3i X (X' S3i X)^{-1/2}`; full column rank, no pivoted Cholesky.
fn score_design(x: &DesignMatrix, cov: &CovModel) -> Result<Matrix> {
    let n = x.n_samples();
    let variances = cov.sigma3.variances(n)?;
    let mut weighted = x.matrix().clone(); // S3i X, N x p
    for i in 0..n {
        let mut row = weighted.row_mut(i);
        row /= variances[i];
    }
    let gram = x.matrix().transpose() * &weighted;
    let (values, _) = sym_eig(&gram);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 1e-12 * max || max == 0.0 {
        return Err(Error::Singular("X^T Sigma3^{-1} X".into()));
    }
    let half = sym_inv_sqrt_mul(&gram, &Matrix::identity(gram.nrows(), gram.ncols()))?;
    Ok(weighted * half)
}

/// Basis start consistent with the constraint: leading left singular
/// vectors of the mode-k unfolding, re-orthonormalized in the
/// `Sigma_k^{-1}` inner product.
fn init_basis(y: &Tensor3, mode: usize, rank: usize, sigma: &crate::cov::SpdFactors) -> Result<Matrix> {
    let sv = top_left_singular_vectors(&y.unfold(mode), rank)?;
    let whitened = orthonormalize(&(&sigma.inv_sqrt * &sv));
    Ok(&sigma.sqrt * whitened)
}

fn projected_scores(
    y: &Tensor3,
    u1: &Matrix,
    u2: &Matrix,
    cov: &CovModel,
    x3t: &Matrix,
) -> Result<f64> {
    let s = y
        .mode_product(&(u1.transpose() * &cov.sigma1().inverse), 1)?
        .mode_product(&(u2.transpose() * &cov.sigma2().inverse), 2)?
        .mode_product(x3t, 3)?;
    let n = s.frobenius_norm();
    Ok(n * n)
}

/// One-step decomposition regression (alternating least squares).
///
/// Learns `Sigma`-orthonormal spatial bases and the core jointly. On
/// non-convergence the best (last) iterate is returned with
/// `converged = false`.
pub fn fit_otdr(
    y: &Tensor3,
    x: &DesignMatrix,
    cov: &CovModel,
    p1: usize,
    p2: usize,
    opts: OtdrOptions,
) -> Result<FitResult> {
    check_response(y, x, cov)?;
    check_ranks(y, p1, p2)?;
    let x3 = score_design(x, cov)?;
    let x3t = x3.transpose();
    let energy = cov.whitened_energy(y)?;

    let mut u1 = init_basis(y, 1, p1, cov.sigma1())?;
    let mut u2 = init_basis(y, 2, p2, cov.sigma2())?;
    let mut trace = vec![energy - projected_scores(y, &u1, &u2, cov, &x3t)?];
    let mut converged = false;

    for _ in 0..opts.max_iter {
        for mode in [1usize, 2usize] {
            let (other_u, other_sigma, sigma) = match mode {
                1 => (&u2, cov.sigma2(), cov.sigma1()),
                _ => (&u1, cov.sigma1(), cov.sigma2()),
            };
            let contraction = other_u.transpose() * &other_sigma.inverse;
            let w = y
                .mode_product(&contraction, 3 - mode)?
                .mode_product(&x3t, 3)?;
            let unfolded = w.unfold(mode);
            let whitened = &sigma.inv_sqrt * unfolded;
            let rank = if mode == 1 { p1 } else { p2 };
            let tilde = top_left_singular_vectors(&whitened, rank)?;
            let updated = &sigma.sqrt * tilde;
            match mode {
                1 => u1 = updated,
                _ => u2 = updated,
            }
        }
        let objective = energy - projected_scores(y, &u1, &u2, cov, &x3t)?;
        let previous = *trace.last().expect("trace is seeded");
        trace.push(objective);
        if (previous - objective).abs() <= opts.tol * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let f1 = basis_projector(&u1, cov.sigma1(), 0.0, None)?;
    let f2 = basis_projector(&u2, cov.sigma2(), 0.0, None)?;
    let t = sample_projector(x, cov)?;
    let core = y
        .mode_product(&f1, 1)?
        .mode_product(&f2, 2)?
        .mode_product(&t, 3)?;
    let tuning = TuningRecord {
        theta: cov.theta,
        ranks: Some((p1, p2)),
        ..TuningRecord::default()
    };
    FitResult::from_core(core, BasisSet::learned(u1, u2), trace, tuning, converged)
}

/// Two-step baseline: Tucker/MPCA bases from the response alone, then the
/// closed-form core regression on those bases.
pub fn fit_tdr(
    y: &Tensor3,
    x: &DesignMatrix,
    cov: &CovModel,
    p1: usize,
    p2: usize,
) -> Result<FitResult> {
    check_response(y, x, cov)?;
    check_ranks(y, p1, p2)?;
    let opts = OtdrOptions::default();
    let total = {
        let n = y.frobenius_norm();
        n * n
    };

    let mut u1 = top_left_singular_vectors(&y.unfold(1), p1)?;
    let mut u2 = top_left_singular_vectors(&y.unfold(2), p2)?;
    let projected = |u1: &Matrix, u2: &Matrix| -> Result<f64> {
        let s = y
            .mode_product(&u1.transpose(), 1)?
            .mode_product(&u2.transpose(), 2)?;
        let n = s.frobenius_norm();
        Ok(n * n)
    };
    let mut trace = vec![total - projected(&u1, &u2)?];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        for mode in [1usize, 2usize] {
            let other = if mode == 1 { &u2 } else { &u1 };
            let w = y.mode_product(&other.transpose(), 3 - mode)?;
            let rank = if mode == 1 { p1 } else { p2 };
            let updated = top_left_singular_vectors(&w.unfold(mode), rank)?;
            match mode {
                1 => u1 = updated,
                _ => u2 = updated,
            }
        }
        let objective = total - projected(&u1, &u2)?;
        let previous = *trace.last().expect("trace is seeded");
        trace.push(objective);
        if (previous - objective).abs() <= opts.tol * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let f1 = basis_projector(&u1, cov.sigma1(), 0.0, None)?;
    let f2 = basis_projector(&u2, cov.sigma2(), 0.0, None)?;
    let t = sample_projector(x, cov)?;
    let core = y
        .mode_product(&f1, 1)?
        .mode_product(&f2, 2)?
        .mode_product(&t, 3)?;
    let tuning = TuningRecord {
        ranks: Some((p1, p2)),
        ..TuningRecord::default()
    };
    FitResult::from_core(core, BasisSet::learned(u1, u2), trace, tuning, converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::{CovModel, Grid, Sigma3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iid(y: &Tensor3) -> CovModel {
        let (i1, i2, _) = y.dims();
        CovModel::iid(i1, i2, Sigma3::unit()).unwrap()
    }

    fn random_design(n: usize, raw: usize, rng: &mut impl Rng) -> DesignMatrix {
        DesignMatrix::with_intercept(&Matrix::from_fn(n, raw, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    #[test]
    fn otdr_reproduces_noiseless_low_rank_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u1 = orthonormalize(&Matrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0)));
        let u2 = orthonormalize(&Matrix::from_fn(7, 2, |_, _| rng.gen_range(-1.0..1.0)));
        let core = Tensor3::from_fn((2, 2, 3), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(12, 2, &mut rng);
        let y = core
            .mode_product(&u1, 1)
            .unwrap()
            .mode_product(&u2, 2)
            .unwrap()
            .mode_product(x.matrix(), 3)
            .unwrap();
        let fit = fit_otdr(&y, &x, &iid(&y), 2, 2, OtdrOptions::default()).unwrap();
        let yhat = fit.predict(&x).unwrap();
        let err = (&yhat - &y).frobenius_norm() / y.frobenius_norm();
        assert!(err < 1e-8, "fitted response error {err}");
        assert!(fit.converged);
    }

    #[test]
    fn otdr_constraint_holds_under_correlated_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let y = Tensor3::from_fn((6, 5, 9), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(9, 2, &mut rng);
        let cov =
            CovModel::gaussian(Grid::uniform(6), Grid::uniform(5), 10.0, Sigma3::unit()).unwrap();
        let fit = fit_otdr(&y, &x, &cov, 2, 3, OtdrOptions::default()).unwrap();
        for (u, sigma) in [(&fit.basis.u1, cov.sigma1()), (&fit.basis.u2, cov.sigma2())] {
            let gram = u.transpose() * &sigma.inverse * u;
            let dev = (&gram - Matrix::identity(gram.nrows(), gram.ncols()))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dev <= 1e-10, "constraint deviation {dev}");
        }
    }

    #[test]
    fn otdr_objective_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let y = Tensor3::from_fn((7, 6, 10), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(10, 3, &mut rng);
        let fit = fit_otdr(&y, &x, &iid(&y), 2, 2, OtdrOptions::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "trace rose: {w:?}");
        }
    }

    #[test]
    fn otdr_identity_covariance_matches_exhaustive_direction_search() {
        // 2x2x3 toy with rank-1 bases: sweep the unit circle of directions
        // at 1e-3 resolution and compare maximal projected score norms.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let y = Tensor3::from_fn((2, 2, 3), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(3, 1, &mut rng);
        let cov = iid(&y);
        let x3 = score_design(&x, &cov).unwrap();
        let x3t = x3.transpose();
        let fit = fit_otdr(&y, &x, &cov, 1, 1, OtdrOptions::default()).unwrap();
        let fitted_score = projected_scores(&y, &fit.basis.u1, &fit.basis.u2, &cov, &x3t).unwrap();
        let mut best = 0.0f64;
        let steps = 3142; // pi / 1e-3: directions are sign-invariant
        for a in 0..steps {
            let ta = a as f64 * 1e-3;
            let u1 = Matrix::from_column_slice(2, 1, &[ta.cos(), ta.sin()]);
            for b in 0..steps {
                let tb = b as f64 * 1e-3;
                let u2 = Matrix::from_column_slice(2, 1, &[tb.cos(), tb.sin()]);
                let s = projected_scores(&y, &u1, &u2, &cov, &x3t).unwrap();
                best = best.max(s);
            }
        }
        assert!(
            fitted_score >= best - 1e-4 * best.abs(),
            "ALS {fitted_score} vs grid {best}"
        );
    }

    #[test]
    fn otdr_flags_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let y = Tensor3::from_fn((6, 6, 8), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(8, 2, &mut rng);
        let opts = OtdrOptions {
            max_iter: 1,
            tol: 0.0,
        };
        let fit = fit_otdr(&y, &x, &iid(&y), 3, 3, opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.objective_trace.len(), 2);
    }

    #[test]
    fn otdr_rejects_bad_ranks() {
        let y = Tensor3::zeros((4, 4, 5));
        let x = DesignMatrix::new(Matrix::from_element(5, 1, 1.0)).unwrap();
        assert!(fit_otdr(&y, &x, &iid(&y), 5, 2, OtdrOptions::default()).is_err());
        assert!(fit_otdr(&y, &x, &iid(&y), 0, 2, OtdrOptions::default()).is_err());
    }

    #[test]
    fn tdr_recovers_rank_one_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let u1 = orthonormalize(&Matrix::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0)));
        let u2 = orthonormalize(&Matrix::from_fn(5, 1, |_, _| rng.gen_range(-1.0..1.0)));
        let core = Tensor3::from_vec((1, 1, 1), vec![2.5]).unwrap();
        let x = DesignMatrix::new(Matrix::from_element(1, 1, 1.0)).unwrap();
        let y = core
            .mode_product(&u1, 1)
            .unwrap()
            .mode_product(&u2, 2)
            .unwrap();
        let fit = fit_tdr(&y, &x, &iid(&y), 1, 1, ).unwrap();
        let yhat = fit.predict(&x).unwrap();
        let err = (&yhat - &y).frobenius_norm() / y.frobenius_norm();
        assert!(err < 1e-10, "reconstruction error {err}");
    }

    #[test]
    fn tdr_equals_otdr_when_subspace_contains_input_variation() {
        // Construct Y whose only variation lies in a fixed rank-(2,2)
        // subspace; then the Tucker bases already span everything the
        // input-aware fit could use and the fitted responses agree.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let u1 = orthonormalize(&Matrix::from_fn(7, 2, |_, _| rng.gen_range(-1.0..1.0)));
        let u2 = orthonormalize(&Matrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)));
        let core = Tensor3::from_fn((2, 2, 3), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(9, 2, &mut rng);
        let y = core
            .mode_product(&u1, 1)
            .unwrap()
            .mode_product(&u2, 2)
            .unwrap()
            .mode_product(x.matrix(), 3)
            .unwrap();
        let cov = iid(&y);
        let tdr = fit_tdr(&y, &x, &cov, 2, 2).unwrap();
        let otdr = fit_otdr(&y, &x, &cov, 2, 2, OtdrOptions::default()).unwrap();
        let yt = tdr.predict(&x).unwrap();
        let yo = otdr.predict(&x).unwrap();
        let diff = (&yt - &yo).frobenius_norm() / y.frobenius_norm();
        assert!(diff < 1e-8, "fitted responses differ by {diff}");
    }

    #[test]
    fn tdr_objective_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let y = Tensor3::from_fn((8, 7, 6), |_, _, _| rng.gen_range(-1.0..1.0));
        let x = random_design(6, 2, &mut rng);
        let fit = fit_tdr(&y, &x, &iid(&y), 3, 2).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "trace rose: {w:?}");
        }
    }
}
