//! Process-setting optimization: choose inputs minimizing the squared
//! deviation of the predicted mean shape from a uniform target radius,
//! subject to a log-linear residual-variance cap and box bounds.
//!
//! `min_x x' A3'A3 x + 2 x' A3' (vec(Ybar) - r_t)` subject to
//! `gamma' x <= ln(sigma0^2) - gamma0`, `l <= x <= u`.
//!
//! The dimension is the number of process variables (a handful), so a
//! primal active-set method with direct solves is the robust choice.
//! Semidefinite `A3'A3` needs no regularization: flat directions are
//! followed until a bound activates.

use crate::error::{Error, Result};
use crate::hetero::VarianceModel;
use crate::linalg::sym_eig;
use crate::tensor::{Matrix, Tensor3, Vector};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct OptProblem {
    /// `(I1*I2) x d` matrix whose columns are the vectorized non-intercept
    /// coefficient slices.
    pub a3: Matrix,
    /// Vectorized mean surface.
    pub ybar: Vector,
    /// Target radius.
    pub r_target: f64,
    /// Residual variance model over the same `d` process variables.
    pub var_model: VarianceModel,
    /// Upper bound on the residual standard deviation.
    pub sigma0: f64,
    pub lower: Vector,
    pub upper: Vector,
}

impl OptProblem {
    pub fn new(
        a3: Matrix,
        ybar: Vector,
        r_target: f64,
        var_model: VarianceModel,
        sigma0: f64,
        lower: Vector,
        upper: Vector,
    ) -> Result<Self> {
        let d = a3.ncols();
        if ybar.len() != a3.nrows() {
            return Err(Error::dims("OptProblem ybar", a3.nrows(), ybar.len()));
        }
        if var_model.gamma.len() != d {
            return Err(Error::dims("OptProblem gamma", d, var_model.gamma.len()));
        }
        if lower.len() != d || upper.len() != d {
            return Err(Error::dims("OptProblem bounds", d, lower.len().max(upper.len())));
        }
        if (0..d).any(|j| lower[j] > upper[j]) {
            return Err(Error::InvalidArgument(
                "lower bounds must not exceed upper bounds".into(),
            ));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::InvalidArgument("sigma0 must be positive".into()));
        }
        Ok(OptProblem {
            a3,
            ybar,
            r_target,
            var_model,
            sigma0,
            lower,
            upper,
        })
    }

    /// Builds the problem from a fitted coefficient tensor: the intercept
    /// slice is the mean surface, the remaining slices form `A3`.
    pub fn from_coef(
        coef: &Tensor3,
        var_model: VarianceModel,
        r_target: f64,
        sigma0: f64,
        lower: Vector,
        upper: Vector,
    ) -> Result<Self> {
        let (i1, i2, p) = coef.dims();
        if p < 2 {
            return Err(Error::InvalidArgument(
                "coefficient tensor needs at least one non-intercept slice".into(),
            ));
        }
        let unfolded = coef.unfold(3); // p x (I1*I2)
        let ybar = Vector::from_iterator(i1 * i2, unfolded.row(0).iter().copied());
        let a3 = unfolded.rows(1, p - 1).transpose();
        OptProblem::new(a3, ybar, r_target, var_model, sigma0, lower, upper)
    }

    fn dim(&self) -> usize {
        self.a3.ncols()
    }

    fn gram(&self) -> Matrix {
        self.a3.transpose() * &self.a3
    }

    fn linear(&self) -> Vector {
        let shifted = &self.ybar - Vector::from_element(self.ybar.len(), self.r_target);
        self.a3.transpose() * shifted
    }

    /// Smallest residual variance achievable inside the box.
    pub fn min_achievable_variance(&self) -> f64 {
        let gamma = &self.var_model.gamma;
        let mut eta = self.var_model.gamma0;
        for j in 0..self.dim() {
            eta += gamma[j] * if gamma[j] > 0.0 { self.lower[j] } else { self.upper[j] };
        }
        eta.exp()
    }

    fn variance_rhs(&self) -> f64 {
        (self.sigma0 * self.sigma0).ln() - self.var_model.gamma0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Quadratic-program objective `x'Gx + 2x'c`.
    pub objective: f64,
    /// Full squared deviation `||ybar + A3 x - r_t||^2`.
    pub deviation: f64,
    pub active_constraints: Vec<String>,
    pub kkt_residual: f64,
}

/// One constraint `a' x <= b`.
struct HalfSpace {
    a: Vector,
    b: f64,
    label: String,
}

fn constraints(p: &OptProblem) -> Vec<HalfSpace> {
    let d = p.dim();
    let mut out = Vec::with_capacity(2 * d + 1);
    out.push(HalfSpace {
        a: Vector::from_iterator(d, p.var_model.gamma.iter().copied()),
        b: p.variance_rhs(),
        label: "variance".into(),
    });
    for j in 0..d {
        let mut a = Vector::zeros(d);
        a[j] = 1.0;
        out.push(HalfSpace {
            a,
            b: p.upper[j],
            label: format!("upper[{j}]"),
        });
    }
    for j in 0..d {
        let mut a = Vector::zeros(d);
        a[j] = -1.0;
        out.push(HalfSpace {
            a,
            b: -p.lower[j],
            label: format!("lower[{j}]"),
        });
    }
    out
}

/// Orthonormal basis of the null space of the active-constraint rows,
/// from the spectrum of `A'A` (the dimension is tiny).
fn null_space(rows: &[&HalfSpace], d: usize) -> Matrix {
    if rows.is_empty() {
        return Matrix::identity(d, d);
    }
    let a = Matrix::from_fn(rows.len(), d, |i, j| rows[i].a[j]);
    let (values, vectors) = sym_eig(&(a.transpose() * &a));
    let tol = 1e-10 * values.first().copied().unwrap_or(0.0).max(1.0);
    let rank = values.iter().filter(|v| **v > tol).count();
    let k = d - rank;
    let mut z = Matrix::zeros(d, k);
    for col in 0..k {
        z.set_column(col, &vectors.column(rank + col));
    }
    z
}

fn rank_of(rows: &[&HalfSpace], d: usize) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let a = Matrix::from_fn(rows.len(), d, |i, j| rows[i].a[j]);
    let (values, _) = sym_eig(&(a.transpose() * &a));
    let tol = 1e-10 * values.first().copied().unwrap_or(0.0).max(1.0);
    values.iter().filter(|v| **v > tol).count()
}

/// Solves the QP by primal active set. Infeasible problems report the
/// smallest variance achievable inside the box.
pub fn solve_qp(problem: &OptProblem) -> Result<QpSolution> {
    let d = problem.dim();
    let g_mat = problem.gram();
    let c = problem.linear();
    let cons = constraints(problem);
    let scale = g_mat.norm().max(c.norm()).max(1.0);

    // Feasibility: the box vertex minimizing the variance constraint.
    let gamma = &cons[0].a;
    let mut x = Vector::zeros(d);
    let mut working: Vec<usize> = Vec::new();
    for j in 0..d {
        if gamma[j] > 0.0 {
            x[j] = problem.lower[j];
            working.push(1 + d + j); // lower bound row
        } else {
            x[j] = problem.upper[j];
            working.push(1 + j); // upper bound row
        }
    }
    if gamma.dot(&x) > cons[0].b + 1e-12 * cons[0].b.abs().max(1.0) {
        return Err(Error::Infeasible {
            min_variance: problem.min_achievable_variance(),
        });
    }

    let objective = |x: &Vector| -> f64 { (x.transpose() * &g_mat * x)[(0, 0)] + 2.0 * x.dot(&c) };
    let gradient = |x: &Vector| -> Vector { &g_mat * x * 2.0 + &c * 2.0 };

    let max_iter = 100 * (2 * d + 2);
    for _ in 0..max_iter {
        let active: Vec<&HalfSpace> = working.iter().map(|&i| &cons[i]).collect();
        let z = null_space(&active, d);
        let grad = gradient(&x);

        // Step within the current face.
        let (step, unbounded_ray) = if z.ncols() == 0 {
            (Vector::zeros(d), false)
        } else {
            let gz = z.transpose() * &grad;
            let hz = z.transpose() * &g_mat * &z * 2.0;
            let (vals, vecs) = sym_eig(&hz);
            let floor = 1e-12 * vals.first().copied().unwrap_or(0.0).max(1.0);
            let mut newton = Vector::zeros(z.ncols());
            let mut flat = Vector::zeros(z.ncols());
            for (idx, &val) in vals.iter().enumerate() {
                let q = vecs.column(idx);
                let coeff = q.dot(&gz);
                if val > floor {
                    newton += q * (-coeff / val);
                } else {
                    flat += q * coeff;
                }
            }
            if flat.norm() > 1e-10 * (1.0 + grad.norm()) {
                // Zero-curvature descent: follow until a bound blocks.
                (&z * (-flat), true)
            } else {
                (&z * newton, false)
            }
        };

        if !unbounded_ray && step.norm() <= 1e-11 * (1.0 + x.norm()) {
            if working.is_empty() {
                // Unconstrained stationary point.
                return Ok(QpSolution {
                    x: x.iter().copied().collect(),
                    objective: objective(&x),
                    deviation: {
                        let r = &problem.ybar + &problem.a3 * &x
                            - Vector::from_element(problem.ybar.len(), problem.r_target);
                        r.norm_squared()
                    },
                    active_constraints: Vec::new(),
                    kkt_residual: grad.amax(),
                });
            }
            // Face minimizer: check multipliers.
            let active_mat = Matrix::from_fn(working.len(), d, |i, j| cons[working[i]].a[j]);
            let normal = &active_mat * active_mat.transpose();
            let rhs = &active_mat * &grad * (-1.0);
            let mu = crate::linalg::sym_solve_vec(&normal, &rhs)?;
            let (min_idx, min_mu) = mu
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| {
                    if v < acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
            if min_mu >= -1e-9 * scale {
                let mut residual = grad.clone();
                residual += active_mat.transpose() * &mu;
                let labels = working.iter().map(|&i| cons[i].label.clone()).collect();
                return Ok(QpSolution {
                    x: x.iter().copied().collect(),
                    objective: objective(&x),
                    deviation: {
                        let r = &problem.ybar + &problem.a3 * &x
                            - Vector::from_element(problem.ybar.len(), problem.r_target);
                        r.norm_squared()
                    },
                    active_constraints: labels,
                    kkt_residual: residual.amax(),
                });
            }
            working.remove(min_idx);
            continue;
        }

        // Ratio test against the inactive constraints.
        let mut alpha = if unbounded_ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        for (i, con) in cons.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let along = con.a.dot(&step);
            if along > 1e-13 * con.a.norm() * step.norm().max(1.0) {
                let room = con.b - con.a.dot(&x);
                let a_i = (room / along).max(0.0);
                if a_i < alpha {
                    alpha = a_i;
                    blocking = Some(i);
                }
            }
        }
        if !alpha.is_finite() {
            return Err(Error::Singular(
                "unbounded descent direction escaped the box".into(),
            ));
        }
        x += &step * alpha;
        if let Some(i) = blocking {
            // Keep the working rows independent; a redundant blocker is
            // already implied by the current face.
            let mut candidate = working.clone();
            candidate.push(i);
            let cand_rows: Vec<&HalfSpace> = candidate.iter().map(|&k| &cons[k]).collect();
            if rank_of(&cand_rows, d) == rank_of(&cand_rows[..working.len()], d) + 1 {
                working.push(i);
            }
        }
    }

    Err(Error::NonConvergence {
        what: "active-set QP".into(),
        iterations: max_iter,
    })
}

/// One point of a `sigma0` sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub sigma0: f64,
    pub feasible: bool,
    pub solution: Option<QpSolution>,
    /// Reported when infeasible: the variance floor over the box.
    pub min_variance: Option<f64>,
}

/// Solves the QP along a grid of variance caps. Infeasible points are
/// flagged rather than fatal.
pub fn sweep_sigma0(problem: &OptProblem, sigma0_grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if sigma0_grid.is_empty() {
        return Err(Error::InvalidArgument("empty sigma0 grid".into()));
    }
    let mut out = Vec::with_capacity(sigma0_grid.len());
    for &s in sigma0_grid {
        let mut p = problem.clone();
        p.sigma0 = s;
        match solve_qp(&p) {
            Ok(sol) => out.push(SweepPoint {
                sigma0: s,
                feasible: true,
                solution: Some(sol),
                min_variance: None,
            }),
            Err(Error::Infeasible { min_variance }) => out.push(SweepPoint {
                sigma0: s,
                feasible: false,
                solution: None,
                min_variance: Some(min_variance),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn var_model(gamma0: f64, gamma: Vec<f64>) -> VarianceModel {
        VarianceModel {
            gamma0,
            std_errors: vec![0.0; gamma.len() + 1],
            gamma,
            dispersion: 1.0,
            converged: true,
            iterations: 1,
        }
    }

    fn random_problem(seed: u64, d: usize, m: usize, sigma0: f64) -> OptProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a3 = Matrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
        let ybar = Vector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
        let gamma: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        OptProblem::new(
            a3,
            ybar,
            rng.gen_range(-0.5..0.5),
            var_model(rng.gen_range(-2.0..-1.0), gamma),
            sigma0,
            Vector::from_element(d, -1.0),
            Vector::from_element(d, 1.0),
        )
        .unwrap()
    }

    /// Brute-force oracle on a uniform grid over the box; infeasible grid
    /// points are skipped.
    fn grid_search(p: &OptProblem, steps: usize) -> (Vector, f64) {
        let d = p.dim();
        assert_eq!(d, 2, "oracle written for two variables");
        let g = p.gram();
        let c = p.linear();
        let obj = |x: &Vector| (x.transpose() * &g * x)[(0, 0)] + 2.0 * x.dot(&c);
        let rhs = p.variance_rhs();
        let gamma = Vector::from_iterator(d, p.var_model.gamma.iter().copied());
        let mut best = (Vector::zeros(d), f64::INFINITY);
        for i in 0..=steps {
            for j in 0..=steps {
                let x = Vector::from_vec(vec![
                    p.lower[0] + (p.upper[0] - p.lower[0]) * i as f64 / steps as f64,
                    p.lower[1] + (p.upper[1] - p.lower[1]) * j as f64 / steps as f64,
                ]);
                if gamma.dot(&x) > rhs {
                    continue;
                }
                let v = obj(&x);
                if v < best.1 {
                    best = (x, v);
                }
            }
        }
        best
    }

    #[test]
    fn interior_minimum_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let a3 = Matrix::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        let ybar = Vector::from_fn(30, |_, _| rng.gen_range(-0.1..0.1));
        let p = OptProblem::new(
            a3.clone(),
            ybar.clone(),
            0.05,
            var_model(-5.0, vec![0.3, -0.2]),
            1.0e3, // cap far away
            Vector::from_element(2, -10.0),
            Vector::from_element(2, 10.0),
        )
        .unwrap();
        let sol = solve_qp(&p).unwrap();
        let target = Vector::from_element(30, 0.05) - &ybar;
        let ls = crate::linalg::sym_solve_vec(&(a3.transpose() * &a3), &(a3.transpose() * target))
            .unwrap();
        for j in 0..2 {
            assert!((sol.x[j] - ls[j]).abs() < 1e-8, "x[{j}] {} vs {}", sol.x[j], ls[j]);
        }
        assert!(sol.active_constraints.is_empty());
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn sigma0_below_box_minimum_is_infeasible() {
        let p = OptProblem::new(
            Matrix::from_element(4, 2, 1.0),
            Vector::zeros(4),
            0.0,
            var_model(-1.0, vec![0.5, 0.5]),
            1e-6,
            Vector::from_element(2, -1.0),
            Vector::from_element(2, 1.0),
        )
        .unwrap();
        match solve_qp(&p) {
            Err(Error::Infeasible { min_variance }) => {
                // gamma positive: floor at the lower-left vertex.
                let expect = (-1.0f64 + 0.5 * -1.0 + 0.5 * -1.0).exp();
                assert!((min_variance - expect).abs() < 1e-12);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn matches_grid_search_on_random_two_variable_problems() {
        for seed in 0..10 {
            let p = random_problem(100 + seed, 2, 12, 0.6);
            let sol = solve_qp(&p).unwrap();
            let (_, best) = grid_search(&p, 1000);
            // The grid resolution bounds how much better the oracle can be.
            let h: f64 = 2.0 / 1000.0;
            let g = p.gram();
            let bound = {
                let gn = g.norm();
                let cn = p.linear().norm();
                gn * h * (2.0 * 2.0f64.sqrt()) + 2.0 * cn * h + gn * h * h
            };
            assert!(
                sol.objective <= best + bound,
                "seed {seed}: solver {} vs grid {best} (bound {bound})",
                sol.objective
            );
            // Feasibility to tight tolerance.
            let x = Vector::from_vec(sol.x.clone());
            let gamma = Vector::from_iterator(2, p.var_model.gamma.iter().copied());
            assert!(gamma.dot(&x) <= p.variance_rhs() + 1e-10);
            for j in 0..2 {
                assert!(x[j] >= p.lower[j] - 1e-10 && x[j] <= p.upper[j] + 1e-10);
            }
        }
    }

    #[test]
    fn handles_rank_deficient_quadratic() {
        // One-column A3 in two variables: a flat direction in the
        // objective that must be resolved by bound activation.
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let col = Vector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let a3 = Matrix::from_fn(10, 2, |i, j| if j == 0 { col[i] } else { col[i] * 2.0 });
        let p = OptProblem::new(
            a3,
            Vector::from_fn(10, |_, _| rng.gen_range(-0.2..0.2)),
            0.1,
            var_model(-4.0, vec![0.2, 0.1]),
            10.0,
            Vector::from_element(2, -1.0),
            Vector::from_element(2, 1.0),
        )
        .unwrap();
        let sol = solve_qp(&p).unwrap();
        let (_, best) = grid_search(&p, 800);
        assert!(sol.objective <= best + 1e-2 * best.abs().max(1.0));
        assert!(sol.kkt_residual <= 1e-6, "kkt {}", sol.kkt_residual);
    }

    #[test]
    fn sweep_objective_is_monotone_and_single_point_matches() {
        let p = random_problem(73, 2, 15, 0.5);
        let grid: Vec<f64> = (1..=12).map(|i| 0.05 * i as f64).collect();
        let sweep = sweep_sigma0(&p, &grid).unwrap();
        assert_eq!(sweep.len(), 12);
        let mut last: Option<f64> = None;
        for point in &sweep {
            if let Some(sol) = &point.solution {
                if let Some(prev) = last {
                    assert!(
                        sol.objective <= prev + 1e-9 * prev.abs().max(1.0),
                        "objective rose along the sweep"
                    );
                }
                last = Some(sol.objective);
            } else {
                assert!(last.is_none(), "feasibility is monotone in sigma0");
                assert!(point.min_variance.is_some());
            }
        }
        // Single-point sweep equals a direct solve.
        let single = sweep_sigma0(&p, &[0.5]).unwrap();
        let direct = solve_qp(&p).unwrap();
        let sx = &single[0].solution.as_ref().unwrap().x;
        for j in 0..2 {
            assert!((sx[j] - direct.x[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_feasible_points_do_not_beat_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let p = random_problem(75, 3, 20, 0.7);
        let sol = solve_qp(&p).unwrap();
        let g = p.gram();
        let c = p.linear();
        let gamma = Vector::from_iterator(3, p.var_model.gamma.iter().copied());
        let mut tested = 0;
        while tested < 2000 {
            let x = Vector::from_fn(3, |j, _| rng.gen_range(p.lower[j]..=p.upper[j]));
            if gamma.dot(&x) > p.variance_rhs() {
                continue;
            }
            tested += 1;
            let v = (x.transpose() * &g * &x)[(0, 0)] + 2.0 * x.dot(&c);
            assert!(v >= sol.objective - 1e-8 * sol.objective.abs().max(1.0));
        }
    }

    #[test]
    fn from_coef_splits_intercept() {
        let coef = Tensor3::from_fn((2, 2, 3), |i1, i2, q| (i1 + 2 * i2 + 4 * q) as f64);
        let p = OptProblem::from_coef(
            &coef,
            var_model(-2.0, vec![0.1, 0.1]),
            1.0,
            1.0,
            Vector::from_element(2, -1.0),
            Vector::from_element(2, 1.0),
        )
        .unwrap();
        assert_eq!(p.a3.ncols(), 2);
        assert_eq!(p.a3.nrows(), 4);
        // ybar is the intercept slice in vec order (mode-1 fastest).
        assert_eq!(p.ybar.as_slice(), &[0.0, 1.0, 2.0, 3.0]);
        // Column 0 of a3 is slice 1.
        assert_eq!(p.a3.column(0).as_slice(), &[4.0, 5.0, 6.0, 7.0]);
    }
}
