//! Brute-force oracles shared by the integration suites. Everything here
//! goes through the explicit vectorized Kronecker system, independent of
//! the per-mode solves in the library.

use tenreg_core::basis::BasisSet;
use tenreg_core::cov::CovModel;
use tenreg_core::regress::DesignMatrix;
use tenreg_core::tensor::{kron, Matrix, Tensor3, Vector};

/// `Omega^{-1} = Sigma3^{-1} (x) Sigma2^{-1} (x) Sigma1^{-1}`.
pub fn dense_precision(cov: &CovModel, n: usize) -> Matrix {
    let variances = cov.sigma3.variances(n).unwrap();
    let s3_inv = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / variances[i]
        } else {
            0.0
        }
    });
    kron(&s3_inv, &kron(&cov.sigma2().inverse, &cov.sigma1().inverse))
}

/// Solves the vectorized normal equations
/// `(K' Omega^{-1} K + penalty) b = K' Omega^{-1} y` with a direct dense
/// solve and folds `b` back into a `(p1, p2, p)` core.
fn dense_solve(
    y: &Tensor3,
    x: &DesignMatrix,
    u1: &Matrix,
    u2: &Matrix,
    penalty: Option<Matrix>,
    cov: &CovModel,
) -> Tensor3 {
    let n = y.dim(3);
    let k = kron(x.matrix(), &kron(u2, u1));
    let omega_inv = dense_precision(cov, n);
    let mut gram = k.transpose() * &omega_inv * &k;
    if let Some(p) = penalty {
        gram += p;
    }
    let rhs = k.transpose() * &omega_inv * y.to_vector();
    let beta = gram.lu().solve(&rhs).expect("dense oracle solve");
    let dims = (u1.ncols(), u2.ncols(), x.n_coefficients());
    Tensor3::from_vec(dims, beta.iter().copied().collect()).unwrap()
}

/// GLS oracle: complete identity bases, returns the full coefficient.
pub fn dense_gls(y: &Tensor3, x: &DesignMatrix, cov: &CovModel) -> Tensor3 {
    let (i1, i2, _) = y.dims();
    dense_solve(y, x, &Matrix::identity(i1, i1), &Matrix::identity(i2, i2), None, cov)
}

/// Projected-regression oracle: returns the core.
pub fn dense_projected(y: &Tensor3, x: &DesignMatrix, basis: &BasisSet, cov: &CovModel) -> Tensor3 {
    dense_solve(y, x, &basis.u1, &basis.u2, None, cov)
}

/// Penalized oracle with the separable penalty
/// `(X'S3i X) (x) (l P2 (x) G1 + l G2 (x) P1 + l^2 P2 (x) P1)`.
pub fn dense_rtr(
    y: &Tensor3,
    x: &DesignMatrix,
    basis: &BasisSet,
    lambda: f64,
    cov: &CovModel,
) -> Tensor3 {
    let n = y.dim(3);
    let variances = cov.sigma3.variances(n).unwrap();
    let mut xt_s3inv = x.matrix().transpose();
    for (i, v) in variances.iter().enumerate() {
        let mut col = xt_s3inv.column_mut(i);
        col /= *v;
    }
    let x_gram = &xt_s3inv * x.matrix();
    let g1 = basis.u1.transpose() * &cov.sigma1().inverse * &basis.u1;
    let g2 = basis.u2.transpose() * &cov.sigma2().inverse * &basis.u2;
    let p1 = basis.penalty1.clone().expect("penalty present");
    let p2 = basis.penalty2.clone().expect("penalty present");
    let spatial = kron(&p2, &g1) * lambda + kron(&g2, &p1) * lambda + kron(&p2, &p1) * (lambda * lambda);
    let penalty = kron(&x_gram, &spatial);
    dense_solve(y, x, &basis.u1, &basis.u2, Some(penalty), cov)
}

/// Whitened quadratic form through the dense precision matrix.
pub fn dense_quadform(resid: &Tensor3, cov: &CovModel) -> f64 {
    let v: Vector = resid.to_vector();
    let omega_inv = dense_precision(cov, resid.dim(3));
    (v.transpose() * omega_inv * v)[(0, 0)]
}
