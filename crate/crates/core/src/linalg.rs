//! Shared dense linear algebra helpers.
//!
//! Everything here goes through symmetric eigendecomposition or SVD so the
//! same eigenvalue flooring and sign conventions apply crate-wide.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Relative eigenvalue floor for regularized solves.
pub const EIG_FLOOR_REL: f64 = 1e-12;

/// Fixes the sign of each column so its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut Matrix) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition of `(m + m^T)/2`, eigenvalues descending.
pub fn sym_eig(m: &Matrix) -> (Vec<f64>, Matrix) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

/// Solves `a x = b` for symmetric `a`, flooring eigenvalues at
/// `EIG_FLOOR_REL * max |eig|` to tame near-singular regularized Grams.
pub fn sym_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eig(a);
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::Singular("symmetric solve of zero matrix".into()));
    }
    let floor = EIG_FLOOR_REL * max_abs;
    let inv = Vector::from_iterator(
        values.len(),
        values.iter().map(|&v| 1.0 / v.max(floor)),
    );
    let vt_b = vectors.transpose() * b;
    let scaled = Matrix::from_fn(vt_b.nrows(), vt_b.ncols(), |i, j| inv[i] * vt_b[(i, j)]);
    Ok(&vectors * scaled)
}

/// [`sym_solve`] for a single right-hand side.
pub fn sym_solve_vec(a: &Matrix, b: &Vector) -> Result<Vector> {
    let solved = sym_solve(a, &Matrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(Vector::from_column_slice(solved.as_slice()))
}

/// `a^{-1/2} b` for symmetric positive definite `a` (same flooring).
pub fn sym_inv_sqrt_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (values, vectors) = sym_eig(a);
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::Singular("inverse square root of zero matrix".into()));
    }
    let floor = EIG_FLOOR_REL * max_abs;
    let inv_sqrt = Vector::from_iterator(
        values.len(),
        values.iter().map(|&v| 1.0 / v.max(floor).sqrt()),
    );
    let vt_b = vectors.transpose() * b;
    let scaled = Matrix::from_fn(vt_b.nrows(), vt_b.ncols(), |i, j| inv_sqrt[i] * vt_b[(i, j)]);
    Ok(&vectors * scaled)
}

/// Leading `k` left singular vectors, sign-fixed; pads with an orthonormal
/// completion if the matrix has fewer than `k` columns or directions.
pub fn top_left_singular_vectors(m: &Matrix, k: usize) -> Result<Matrix> {
    let rows = m.nrows();
    if k > rows {
        return Err(Error::InvalidArgument(format!(
            "requested {k} singular vectors from a {rows}-row matrix"
        )));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    // nalgebra returns singular values unsorted in rare ties; sort explicitly.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let available = order.len().min(k);
    let mut out = Matrix::zeros(rows, k);
    for j in 0..available {
        out.set_column(j, &u.column(order[j]));
    }
    if available < k {
        complete_orthonormal(&mut out, available);
    }
    fix_column_signs(&mut out);
    Ok(out)
}

/// Fills columns `from..` with unit vectors orthogonal to the existing ones
/// via Gram-Schmidt against the canonical basis.
fn complete_orthonormal(m: &mut Matrix, from: usize) {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut filled = from;
    'candidates: for c in 0..rows {
        if filled == cols {
            break;
        }
        let mut v = Vector::zeros(rows);
        v[c] = 1.0;
        for j in 0..filled {
            let proj = m.column(j).dot(&v);
            v -= m.column(j) * proj;
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue 'candidates;
        }
        m.set_column(filled, &(v / norm));
        filled += 1;
    }
    assert_eq!(filled, cols, "orthonormal completion failed");
}

/// Thin QR orthonormalization of the columns of `m`.
pub fn orthonormalize(m: &Matrix) -> Matrix {
    let qr = m.clone().qr();
    let mut q = qr.q();
    fix_column_signs(&mut q);
    q
}
