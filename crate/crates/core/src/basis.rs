//! Per-mode basis matrices and roughness penalties.
//!
//! `n_knots` counts distinct uniformly spaced knot positions across the
//! domain (endpoints included for the clamped case), so a cubic basis with
//! 20 knots has 22 columns; the periodic variant wraps and has `n_knots`
//! columns.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Bspline,
    PeriodicBspline,
    Sine,
    Learned,
}

/// The two spatial-mode bases `U1`, `U2` with optional penalty matrices.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub u1: Matrix,
    pub u2: Matrix,
    pub penalty1: Option<Matrix>,
    pub penalty2: Option<Matrix>,
    pub kind1: BasisKind,
    pub kind2: BasisKind,
}

impl BasisSet {
    pub fn new(u1: Matrix, u2: Matrix, kind1: BasisKind, kind2: BasisKind) -> Result<Self> {
        for (name, u) in [("U1", &u1), ("U2", &u2)] {
            if u.ncols() > u.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "{name} has more columns ({}) than rows ({})",
                    u.ncols(),
                    u.nrows()
                )));
            }
        }
        Ok(BasisSet {
            u1,
            u2,
            penalty1: None,
            penalty2: None,
            kind1,
            kind2,
        })
    }

    pub fn with_penalties(mut self, p1: Matrix, p2: Matrix) -> Result<Self> {
        for (u, p, name) in [(&self.u1, &p1, "P1"), (&self.u2, &p2, "P2")] {
            if p.nrows() != u.ncols() || p.ncols() != u.ncols() {
                return Err(Error::dims(
                    format!("penalty {name}"),
                    format!("{0}x{0}", u.ncols()),
                    format!("{}x{}", p.nrows(), p.ncols()),
                ));
            }
            if (p - p.transpose()).norm() > 1e-10 * p.norm().max(1.0) {
                return Err(Error::InvalidArgument(format!("penalty {name} not symmetric")));
            }
        }
        self.penalty1 = Some(p1);
        self.penalty2 = Some(p2);
        Ok(self)
    }

    /// Learned bases (no penalties), as produced by the decomposition fits.
    pub fn learned(u1: Matrix, u2: Matrix) -> Self {
        BasisSet {
            u1,
            u2,
            penalty1: None,
            penalty2: None,
            kind1: BasisKind::Learned,
            kind2: BasisKind::Learned,
        }
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.u1.ncols(), self.u2.ncols())
    }

    /// Clamped cubic B-spline pair with second-difference penalties, the
    /// customary choice for smooth surfaces on a rectangular grid.
    pub fn bspline_pair(i1: usize, i2: usize, n_knots: usize, mode1_periodic: bool) -> Result<Self> {
        let period = 2.0 * std::f64::consts::PI;
        let u1 = if mode1_periodic {
            bspline_basis(i1, n_knots, 3, true, period)?
        } else {
            bspline_basis(i1, n_knots, 3, false, 1.0)?
        };
        let u2 = bspline_basis(i2, n_knots, 3, false, 1.0)?;
        let p1 = second_difference_penalty(u1.ncols(), mode1_periodic)?;
        let p2 = second_difference_penalty(u2.ncols(), false)?;
        let kind1 = if mode1_periodic {
            BasisKind::PeriodicBspline
        } else {
            BasisKind::Bspline
        };
        BasisSet::new(u1, u2, kind1, BasisKind::Bspline)?.with_penalties(p1, p2)
    }
}

/// Ordinary B-spline value `N_{j,d}` on an arbitrary knot vector.
fn cox_de_boor(knots: &[f64], j: usize, degree: usize, x: f64) -> f64 {
    if degree == 0 {
        return if knots[j] <= x && x < knots[j + 1] {
            1.0
        } else {
            0.0
        };
    }
    let mut value = 0.0;
    let d1 = knots[j + degree] - knots[j];
    if d1 > 0.0 {
        value += (x - knots[j]) / d1 * cox_de_boor(knots, j, degree - 1, x);
    }
    let d2 = knots[j + degree + 1] - knots[j + 1];
    if d2 > 0.0 {
        value += (knots[j + degree + 1] - x) / d2 * cox_de_boor(knots, j + 1, degree - 1, x);
    }
    value
}

/// B-spline basis evaluated on a uniform grid.
///
/// Non-periodic: clamped knots on `[0, 1]`, evaluation at `i/n`, `i = 1..=n`,
/// giving `n_knots + degree - 1` columns. Periodic: wrapped uniform knots on
/// `[0, period)`, evaluation at `i*period/n`, giving `n_knots` columns. Rows
/// sum to one in both cases.
pub fn bspline_basis(
    n_points: usize,
    n_knots: usize,
    degree: usize,
    periodic: bool,
    period: f64,
) -> Result<Matrix> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    if n_knots < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least degree+1 = {} knots, got {n_knots}",
            degree + 1
        )));
    }
    if periodic {
        if !(period > 0.0) {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        let h = period / n_knots as f64;
        // Extended uniform knots covering every spline whose support meets
        // [0, period); column k folds onto periodic basis k mod n_knots.
        let ext: Vec<f64> = (0..=(n_knots + 2 * degree + 1))
            .map(|k| (k as f64 - degree as f64) * h)
            .collect();
        let n_ordinary = n_knots + degree;
        let mut m = Matrix::zeros(n_points, n_knots);
        for i in 0..n_points {
            let x = (i + 1) as f64 / n_points as f64 * period;
            let x = x % period;
            for k in 0..n_ordinary {
                let v = cox_de_boor(&ext, k, degree, x);
                if v != 0.0 {
                    m[(i, k % n_knots)] += v;
                }
            }
        }
        Ok(m)
    } else {
        let n_basis = n_knots + degree - 1;
        let h = 1.0 / (n_knots - 1) as f64;
        let mut knots = Vec::with_capacity(n_knots + 2 * degree);
        knots.extend(std::iter::repeat(0.0).take(degree));
        knots.extend((0..n_knots).map(|k| k as f64 * h));
        knots.extend(std::iter::repeat(1.0).take(degree));
        let mut m = Matrix::zeros(n_points, n_basis);
        for i in 0..n_points {
            let x = (i + 1) as f64 / n_points as f64;
            // The half-open Cox-de Boor intervals miss the right endpoint;
            // evaluate just inside instead.
            let x = x.min(1.0 - 1e-12);
            for j in 0..n_basis {
                m[(i, j)] = cox_de_boor(&knots, j, degree, x);
            }
        }
        Ok(m)
    }
}

/// Second-difference roughness penalty `P = (D^2)^T D^2`.
///
/// Non-periodic `D^2` is `(p-2) x p` with rows `[1, -2, 1]`; the null space
/// is constants and linear ramps. The periodic variant wraps the rows and
/// annihilates only constants.
pub fn second_difference_penalty(p: usize, periodic: bool) -> Result<Matrix> {
    if p < 3 {
        return Err(Error::InvalidArgument(format!(
            "second-difference penalty needs at least 3 coefficients, got {p}"
        )));
    }
    let d2 = if periodic {
        let mut d = Matrix::zeros(p, p);
        for i in 0..p {
            d[(i, i)] = 1.0;
            d[(i, (i + 1) % p)] = -2.0;
            d[(i, (i + 2) % p)] = 1.0;
        }
        d
    } else {
        let mut d = Matrix::zeros(p - 2, p);
        for i in 0..p - 2 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        d
    };
    Ok(d2.transpose() * d2)
}

/// Sine basis from the wave-surface generator: entry `(i, a)` is
/// `sin(i * pi * alpha_a / n)` with rows `i = 1..=n`.
pub fn sine_basis(n: usize, alphas: &[usize]) -> Result<Matrix> {
    if n == 0 || alphas.is_empty() {
        return Err(Error::InvalidArgument("empty sine basis".into()));
    }
    let pi = std::f64::consts::PI;
    Ok(Matrix::from_fn(n, alphas.len(), |i, a| {
        ((i + 1) as f64 * pi * alphas[a] as f64 / n as f64).sin()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_zero_bsplines_are_indicators() {
        // Two knots: a single cell, one all-ones column.
        let m = bspline_basis(6, 2, 0, false, 1.0).unwrap();
        assert_eq!(m.ncols(), 1);
        assert!(m.iter().all(|&v| v == 1.0));
        // Three knots: indicators of [0, 1/2) and [1/2, 1].
        let m = bspline_basis(6, 3, 0, false, 1.0).unwrap();
        assert_eq!(m.ncols(), 2);
        for i in 0..6 {
            let x = (i + 1) as f64 / 6.0;
            let expect = if x < 0.5 { [1.0, 0.0] } else { [0.0, 1.0] };
            assert_eq!([m[(i, 0)], m[(i, 1)]], expect, "x = {x}");
        }
    }

    #[test]
    fn cubic_rows_sum_to_one() {
        let m = bspline_basis(200, 20, 3, false, 1.0).unwrap();
        assert_eq!(m.ncols(), 22);
        for i in 0..200 {
            assert_relative_eq!(m.row(i).sum(), 1.0, max_relative = 1e-10);
        }
        let m = bspline_basis(200, 20, 3, true, 2.0 * std::f64::consts::PI).unwrap();
        assert_eq!(m.ncols(), 20);
        for i in 0..200 {
            assert_relative_eq!(m.row(i).sum(), 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn periodic_basis_wraps_continuously() {
        // Evaluate the wrapped recursion on a fine grid across the seam: the
        // value at the period must match the value at zero for all columns.
        let period = 2.0 * std::f64::consts::PI;
        let n_knots = 8;
        let degree = 3;
        let h = period / n_knots as f64;
        let ext: Vec<f64> = (0..=(n_knots + 2 * degree + 1))
            .map(|k| (k as f64 - degree as f64) * h)
            .collect();
        let eval = |x: f64| -> Vec<f64> {
            let mut row = vec![0.0; n_knots];
            for k in 0..n_knots + degree {
                let v = cox_de_boor(&ext, k, degree, x % period);
                row[k % n_knots] += v;
            }
            row
        };
        let at_zero = eval(0.0);
        let near_period = eval(period - 1e-9);
        for (a, b) in at_zero.iter().zip(&near_period) {
            assert!((a - b).abs() < 1e-6, "seam mismatch {a} vs {b}");
        }
    }

    #[test]
    fn bspline_rejects_too_few_knots() {
        assert!(bspline_basis(10, 3, 3, false, 1.0).is_err());
    }

    #[test]
    fn penalty_minimal_case() {
        let p = second_difference_penalty(3, false).unwrap();
        let d2 = Matrix::from_row_slice(1, 3, &[1.0, -2.0, 1.0]);
        assert_eq!(p, d2.transpose() * d2);
    }

    #[test]
    fn penalty_null_space() {
        let p = second_difference_penalty(7, false).unwrap();
        let ones = Matrix::from_element(7, 1, 1.0);
        let ramp = Matrix::from_fn(7, 1, |i, _| i as f64);
        assert!((&p * ones).norm() < 1e-12);
        assert!((&p * ramp).norm() < 1e-12);
        assert!(second_difference_penalty(2, false).is_err());
    }

    #[test]
    fn penalty_quadratic_form_counts_second_differences() {
        let n = 9;
        let p = second_difference_penalty(n, false).unwrap();
        let q = Matrix::from_fn(n, 1, |i, _| (i as f64) * (i as f64));
        let form = (q.transpose() * &p * &q)[(0, 0)];
        assert_relative_eq!(form, 4.0 * (n as f64 - 2.0), max_relative = 1e-12);
    }

    #[test]
    fn periodic_penalty_annihilates_only_constants() {
        let n = 8;
        let p = second_difference_penalty(n, true).unwrap();
        let ones = Matrix::from_element(n, 1, 1.0);
        assert!((&p * ones).norm() < 1e-12);
        let svd = p.svd(false, false);
        let vals: Vec<f64> = svd.singular_values.iter().copied().collect();
        let rank = vals.iter().filter(|v| **v > 1e-10).count();
        assert_eq!(rank, n - 1);
    }

    #[test]
    fn sine_basis_values() {
        let m = sine_basis(2, &[1]).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(m[(1, 0)], 0.0, epsilon = 1e-12);
        let m = sine_basis(200, &[1, 2, 3]).unwrap();
        // Last row is sin(pi * alpha) = 0 for integer alpha.
        for a in 0..3 {
            assert_relative_eq!(m[(199, a)], 0.0, epsilon = 1e-12);
        }
        // Columns are near-orthogonal on a fine grid.
        for a in 0..3 {
            for b in 0..a {
                let dot = m.column(a).dot(&m.column(b));
                let scale = m.column(a).norm() * m.column(b).norm();
                assert!(dot.abs() / scale < 1e-10, "columns {a},{b} correlate");
            }
        }
    }

    #[test]
    fn generated_bases_have_full_column_rank() {
        let cases: Vec<Matrix> = vec![
            bspline_basis(60, 20, 3, false, 1.0).unwrap(),
            bspline_basis(60, 20, 3, true, 2.0 * std::f64::consts::PI).unwrap(),
            sine_basis(60, &[1, 2, 3]).unwrap(),
        ];
        for m in cases {
            let svd = m.clone().svd(false, false);
            let min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 1e-8, "smallest singular value {min}");
        }
    }

    #[test]
    fn penalty_quadratic_form_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for periodic in [false, true] {
            let p = second_difference_penalty(10, periodic).unwrap();
            for _ in 0..50 {
                let beta = Matrix::from_fn(10, 1, |_, _| rng.gen_range(-2.0..2.0));
                let form = (beta.transpose() * &p * &beta)[(0, 0)];
                assert!(form >= -1e-12, "negative quadratic form {form}");
            }
        }
    }

    #[test]
    fn basis_set_checks_shapes() {
        let u = bspline_basis(30, 8, 3, false, 1.0).unwrap();
        let set = BasisSet::new(u.clone(), u.clone(), BasisKind::Bspline, BasisKind::Bspline).unwrap();
        assert_eq!(set.ranks(), (10, 10));
        let bad = second_difference_penalty(4, false).unwrap();
        let good1 = second_difference_penalty(10, false).unwrap();
        assert!(BasisSet::new(u.clone(), u, BasisKind::Bspline, BasisKind::Bspline)
            .unwrap()
            .with_penalties(good1, bad)
            .is_err());
    }
}
