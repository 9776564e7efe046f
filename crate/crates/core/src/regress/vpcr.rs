//! Vectorized principal component regression baseline: PCA on the
//! sample-mode unfolding, then ordinary least squares of the scores on the
//! inputs. Ignores the grid structure entirely.

use super::{predict, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, sym_eig};
use crate::tensor::{Matrix, Tensor3};

/// VPCR output: coefficient tensor plus the vectorized principal
/// components it was assembled from.
#[derive(Debug, Clone)]
pub struct VpcrFit {
    /// Coefficient tensor `A` (I1 x I2 x p); intercept slice includes the
    /// training mean surface.
    pub coef: Tensor3,
    /// `I1*I2 x r` orthonormal components of the centered unfolding.
    pub components: Matrix,
    /// `p x r` least-squares coefficients of the scores on the inputs.
    pub scores_coef: Matrix,
    /// Variance captured by each retained component.
    pub explained: Vec<f64>,
}

impl VpcrFit {
    pub fn predict(&self, xnew: &DesignMatrix) -> Result<Tensor3> {
        predict(&self.coef, xnew)
    }
}

/// Eigen-spectrum of the centered sample-mode Gram, descending.
fn centered_spectrum(y: &Tensor3) -> (Matrix, Vec<f64>, Matrix, Matrix) {
    let n = y.dim(3);
    let y3 = y.unfold(3); // N x (I1*I2)
    let mean = y3.row_mean();
    let mut centered = y3;
    for i in 0..n {
        let mut row = centered.row_mut(i);
        row -= &mean;
    }
    let gram = &centered * centered.transpose();
    let (values, vectors) = sym_eig(&gram);
    (centered, values, vectors, Matrix::from_rows(&[mean]))
}

/// Smallest component count capturing `fraction` of the centered variance.
pub fn vpcr_rank_for_variance(y: &Tensor3, fraction: f64) -> Result<usize> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance fraction must be in (0, 1], got {fraction}"
        )));
    }
    let (_, values, _, _) = centered_spectrum(y);
    let total: f64 = values.iter().filter(|v| **v > 0.0).sum();
    if total <= 0.0 {
        return Err(Error::Singular("response has no variance across samples".into()));
    }
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total {
            return Ok(i + 1);
        }
    }
    Ok(values.len())
}

/// PCA on the `N x (I1*I2)` unfolding followed by score regression.
pub fn fit_vpcr(y: &Tensor3, x: &DesignMatrix, n_components: usize) -> Result<VpcrFit> {
    let (i1, i2, n) = y.dims();
    if x.n_samples() != n {
        return Err(Error::dims("response vs design", n, x.n_samples()));
    }
    x.check_full_rank()?;
    if n_components == 0 || n_components > n.min(i1 * i2) {
        return Err(Error::InvalidArgument(format!(
            "component count {n_components} out of range for {n} samples on a {i1}x{i2} grid"
        )));
    }
    let (centered, values, vectors, mean) = centered_spectrum(y);
    let max = values.first().copied().unwrap_or(0.0);
    if values[n_components - 1] <= 1e-12 * max.max(1e-300) {
        return Err(Error::Singular(format!(
            "centered responses have rank below {n_components}"
        )));
    }

    // components = Yc' Q diag(1/sqrt(l)): orthonormal right factors.
    let mut components = Matrix::zeros(i1 * i2, n_components);
    for j in 0..n_components {
        let col = centered.transpose() * vectors.column(j) / values[j].sqrt();
        components.set_column(j, &col);
    }
    fix_column_signs(&mut components);
    let scores = &centered * &components; // N x r

    let xm = x.matrix();
    let gram = xm.transpose() * xm;
    let scores_coef = crate::linalg::sym_solve(&gram, &(xm.transpose() * &scores))?; // p x r

    // Reassemble the coefficient tensor; the intercept slice carries the
    // training mean so prediction is a single mode product.
    let p = x.n_coefficients();
    let mut a3 = Matrix::zeros(p, i1 * i2);
    for q in 0..p {
        let slice = &components * scores_coef.row(q).transpose();
        a3.set_row(q, &slice.transpose().row(0));
    }
    for j in 0..i1 * i2 {
        a3[(0, j)] += mean[(0, j)];
    }
    let coef = Tensor3::fold(&a3, 3, (i1, i2, p))?;
    Ok(VpcrFit {
        coef,
        components,
        scores_coef,
        explained: values[..n_components].to_vec(),
    })
}
