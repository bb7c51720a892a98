//! Finite-difference discretization of `A^{ij}(x,u,Du)D_{ij}u + B(x,u,Du) = 0`
//! with Dirichlet data, solved by damped Newton iteration.
//!
//! Interior nodes use the 9-point stencil: central second differences for
//! `D_11`, `D_22`, the 4-point cross stencil for `D_12` and central first
//! differences for `Du`. The Jacobian is assembled by forward differences,
//! perturbing the nine stencil colors `(i mod 3, j mod 3)` one at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::equation::{sym_eigen, EquationSpec};
use crate::error::{input, LabError, Result};
use crate::field::{Grid2D, Point, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_newton_iters: usize,
    /// Max-norm residual target.
    pub residual_tol: f64,
    /// Backtracking factor applied to the step length on rejection.
    pub damping: f64,
    /// Relative residual accepted from the linear solve before iterative
    /// refinement kicks in.
    pub linear_solver_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_newton_iters: 30,
            residual_tol: 1e-8,
            damping: 0.5,
            linear_solver_tol: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_newton_iters == 0 {
            return input("max_newton_iters must be at least 1");
        }
        if !(self.residual_tol > 0.0) || !(self.linear_solver_tol > 0.0) {
            return input("tolerances must be positive");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return input(format!("damping must lie in (0, 1), got {}", self.damping));
        }
        Ok(())
    }
}

/// Converged solution with its Newton history.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    /// Max-norm residual after each accepted step (index 0: initial iterate).
    pub history: Vec<f64>,
}

/// Discrete operator at interior node `(i, j)`.
#[inline]
fn local_residual(
    spec: &EquationSpec,
    g: &Grid2D,
    u: &[f64],
    i: usize,
    j: usize,
) -> (f64, [[f64; 2]; 2]) {
    let nx = g.nx();
    let (hx, hy) = (g.hx(), g.hy());
    let k = j * nx + i;
    let c = u[k];
    let (e, w, n, s) = (u[k + 1], u[k - 1], u[k + nx], u[k - nx]);
    let (ne, nw, se, sw) = (u[k + nx + 1], u[k + nx - 1], u[k - nx + 1], u[k - nx - 1]);
    let p = [(e - w) / (2.0 * hx), (n - s) / (2.0 * hy)];
    let uxx = (e - 2.0 * c + w) / (hx * hx);
    let uyy = (n - 2.0 * c + s) / (hy * hy);
    let uxy = (ne - se - nw + sw) / (4.0 * hx * hy);
    let x = g.node(i, j);
    let a = spec.a_at(x, c, p);
    let r = a[0][0] * uxx + (a[0][1] + a[1][0]) * uxy + a[1][1] * uyy + spec.b_at(x, c, p);
    (r, a)
}

fn interior_residuals(spec: &EquationSpec, g: &Grid2D, u: &[f64], check: bool) -> Result<Vec<f64>> {
    let (nx, ny) = (g.nx(), g.ny());
    let rows: Vec<Result<Vec<f64>>> = (1..ny - 1)
        .into_par_iter()
        .map(|j| {
            (1..nx - 1)
                .map(|i| {
                    let (r, a) = local_residual(spec, g, u, i, j);
                    if check {
                        let (lo, _) = sym_eigen(a);
                        if !(lo > 0.0) {
                            return Err(LabError::Structure {
                                location: format!("node ({i}, {j}) at {:?}", g.node(i, j)),
                                detail: format!("A is not positive definite (λ_min = {lo})"),
                            });
                        }
                    }
                    Ok(r)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity((nx - 2) * (ny - 2));
    for row in rows {
        out.extend(row?);
    }
    Ok(out)
}

/// Nodal residual of the discrete equation; boundary nodes are 0.
pub fn residual(spec: &EquationSpec, u: &ScalarField) -> Result<ScalarField> {
    let g = *u.grid();
    let inner = interior_residuals(spec, &g, u.values(), true)?;
    let mut vals = vec![0.0; g.len()];
    let m = g.nx() - 2;
    for (t, r) in inner.into_iter().enumerate() {
        vals[g.index(t % m + 1, t / m + 1)] = r;
    }
    ScalarField::new(g, vals)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(
        0.0,
        |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
    )
}

struct Layout {
    m: usize,
    band: usize,
}

impl Layout {
    fn new(g: &Grid2D) -> Self {
        let m = g.nx() - 2;
        Self { m, band: m + 1 }
    }

    #[inline]
    fn unknown(&self, i: usize, j: usize) -> usize {
        (j - 1) * self.m + (i - 1)
    }
}

/// Boundary values from `boundary`, interior from the discrete harmonic
/// extension (5-point Laplacian).
pub fn harmonic_extension(grid: Grid2D, boundary: &dyn Fn(Point) -> f64) -> Result<ScalarField> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let lay = Layout::new(&grid);
    let mut u = ScalarField::from_fn(grid, |x| boundary(x));
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            u.values_mut()[grid.index(i, j)] = 0.0;
        }
    }
    let n = (nx - 2) * (ny - 2);
    let (cx, cy) = (1.0 / (grid.hx() * grid.hx()), 1.0 / (grid.hy() * grid.hy()));
    let mut a = BandMatrix::zeros(n, lay.band, lay.band);
    let mut rhs = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let r = lay.unknown(i, j);
            a.set(r, r, -2.0 * (cx + cy));
            for (ii, jj, c) in [
                (i + 1, j, cx),
                (i - 1, j, cx),
                (i, j + 1, cy),
                (i, j - 1, cy),
            ] {
                if grid.is_boundary(ii, jj) {
                    rhs[r] -= c * u.at(ii, jj);
                } else {
                    a.set(r, lay.unknown(ii, jj), c);
                }
            }
        }
    }
    let sol = a.factorize()?.solve(&rhs)?;
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            u.values_mut()[grid.index(i, j)] = sol[lay.unknown(i, j)];
        }
    }
    Ok(u)
}

fn jacobian(
    spec: &EquationSpec,
    g: &Grid2D,
    u: &[f64],
    r0: &[f64],
    lay: &Layout,
) -> Result<BandMatrix> {
    let (nx, ny) = (g.nx(), g.ny());
    let n = (nx - 2) * (ny - 2);
    let mut jac = BandMatrix::zeros(n, lay.band, lay.band);
    let sqrt_eps = f64::EPSILON.sqrt();
    for color in 0..9 {
        let (ci, cj) = (color % 3, color / 3);
        let mut up = u.to_vec();
        let mut step = vec![0.0; g.len()];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                if i % 3 == ci && j % 3 == cj {
                    let k = g.index(i, j);
                    let h = sqrt_eps * u[k].abs().max(1.0);
                    // exactly representable increment
                    let h = (u[k] + h) - u[k];
                    step[k] = h;
                    up[k] += h;
                }
            }
        }
        let r1 = interior_residuals(spec, g, &up, false)?;
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let row = lay.unknown(i, j);
                // the unique node of this color in the 3×3 neighborhood
                let qi = i - 1 + (ci + 3 - (i - 1) % 3) % 3;
                let qj = j - 1 + (cj + 3 - (j - 1) % 3) % 3;
                if g.is_boundary(qi, qj) {
                    continue;
                }
                let h = step[g.index(qi, qj)];
                jac.set(row, lay.unknown(qi, qj), (r1[row] - r0[row]) / h);
            }
        }
    }
    Ok(jac)
}

/// Damped Newton solve with the harmonic extension as initial iterate.
/// Every accepted step strictly decreases the max-norm residual.
pub fn newton_solve(
    spec: &EquationSpec,
    boundary: &dyn Fn(Point) -> f64,
    grid: Grid2D,
    opts: &SolverOptions,
) -> Result<Solution> {
    opts.validate()?;
    let lay = Layout::new(&grid);
    let mut u = harmonic_extension(grid, boundary)?.into_values();
    let mut r = interior_residuals(spec, &grid, &u, true)?;
    let mut norm = max_norm(&r);
    let mut history = vec![norm];
    let stall = |iterations: usize, residual: f64, reason: &str| LabError::Convergence {
        iterations,
        residual,
        reason: reason.to_string(),
    };

    for it in 0..opts.max_newton_iters {
        if norm <= opts.residual_tol {
            return finish(grid, u, it, norm, history);
        }
        let jac = jacobian(spec, &grid, &u, &r, &lay)?;
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = solve_refined(jac, &neg_r, opts.linear_solver_tol)?;

        let mut t = 1.0;
        loop {
            let mut trial = u.clone();
            for j in 1..grid.ny() - 1 {
                for i in 1..grid.nx() - 1 {
                    trial[grid.index(i, j)] += t * du[lay.unknown(i, j)];
                }
            }
            // A trial step may leave the elliptic regime; treat that as a
            // rejected step rather than a failure.
            if let Ok(rt) = interior_residuals(spec, &grid, &trial, true) {
                let nt = max_norm(&rt);
                if nt < norm {
                    u = trial;
                    r = rt;
                    norm = nt;
                    history.push(norm);
                    break;
                }
            }
            t *= opts.damping;
            if t < 1e-12 {
                return Err(stall(it + 1, norm, "line search stagnated"));
            }
        }
    }
    if norm <= opts.residual_tol {
        return finish(grid, u, opts.max_newton_iters, norm, history);
    }
    Err(stall(
        opts.max_newton_iters,
        norm,
        "iteration limit reached",
    ))
}

fn finish(
    grid: Grid2D,
    u: Vec<f64>,
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
) -> Result<Solution> {
    Ok(Solution {
        u: ScalarField::new(grid, u)?,
        iterations,
        residual,
        history,
    })
}

fn solve_refined(jac: BandMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let original = jac.clone();
    let lu = jac.factorize().map_err(|e| LabError::Convergence {
        iterations: 0,
        residual: max_norm(rhs),
        reason: format!("Jacobian factorization failed: {e}"),
    })?;
    let mut x = lu.solve(rhs)?;
    let scale = max_norm(rhs).max(f64::MIN_POSITIVE);
    for _ in 0..2 {
        let ax = original.matvec(&x);
        let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if max_norm(&res) <= tol * scale {
            break;
        }
        let dx = lu.solve(&res)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::{mms_source, ManufacturedSolution};
    use std::sync::Arc;

    #[test]
    fn residual_examples() {
        let g = Grid2D::unit_square(9).unwrap();
        let lap = EquationSpec::laplace();
        let affine = ScalarField::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1]);
        assert!(residual(&lap, &affine).unwrap().max_abs() < 1e-11);
        let sq = ScalarField::from_fn(g, |x| x[0] * x[0]);
        let r = residual(&lap, &sq).unwrap();
        for j in 0..9 {
            for i in 0..9 {
                let expect = if g.is_boundary(i, j) { 0.0 } else { 2.0 };
                assert!((r.at(i, j) - expect).abs() < 1e-10);
            }
        }
        let ms = EquationSpec::minimal_surface();
        assert!(residual(&ms, &affine).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn residual_exact_on_quadratics_for_constant_a() {
        let g = Grid2D::new(7, 8, [0.0, 2.0, -1.0, 0.5]).unwrap();
        let spec = EquationSpec::from_expressions("c", "2", "0.5", "1", "0").unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1]);
        // 2·2 + 2·0.5·3 + 1·(−2) = 5
        let r = residual(&spec, &u).unwrap();
        for j in 1..7 {
            for i in 1..6 {
                assert!((r.at(i, j) - 5.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn residual_reports_structure_errors() {
        let g = Grid2D::unit_square(5).unwrap();
        let bad = EquationSpec::from_expressions("bad", "1", "2", "1", "0").unwrap();
        let u = ScalarField::constant(g, 0.0);
        let err = residual(&bad, &u).unwrap_err();
        assert!(
            matches!(err, LabError::Structure { ref location, .. } if location.contains("node"))
        );
    }

    #[test]
    fn laplace_reproduces_affine_data() {
        let g = Grid2D::unit_square(17).unwrap();
        let sol = newton_solve(
            &EquationSpec::laplace(),
            &|x| x[0] + x[1],
            g,
            &SolverOptions::default(),
        )
        .unwrap();
        for k in 0..g.len() {
            let x = g.node_at(k);
            assert!((sol.u.values()[k] - (x[0] + x[1])).abs() < 1e-10);
        }
        assert!(sol.residual <= 1e-8);
    }

    #[test]
    fn minimal_surface_affine_solution() {
        let g = Grid2D::unit_square(21).unwrap();
        let ms = EquationSpec::minimal_surface();
        let sol =
            newton_solve(&ms, &|x| 0.2 * (x[0] + x[1]), g, &SolverOptions::default()).unwrap();
        assert!(residual(&ms, &sol.u).unwrap().max_abs() <= 1e-8);
        for k in 0..g.len() {
            let x = g.node_at(k);
            assert!((sol.u.values()[k] - 0.2 * (x[0] + x[1])).abs() < 1e-9);
        }
    }

    #[test]
    fn nonlinear_problem_converges_monotonically() {
        let g = Grid2D::unit_square(25).unwrap();
        let ms = EquationSpec::minimal_surface();
        let sol = newton_solve(
            &ms,
            &|x| (3.0 * x[0]).sin() * x[1] + x[0] * x[0],
            g,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(sol.residual <= 1e-8);
        assert!(sol.history.windows(2).all(|w| w[1] < w[0]));
        assert!(residual(&ms, &sol.u).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn mms_residual_of_exact_solution_is_second_order() {
        let spec = mms_source(
            &EquationSpec::isotropic_quasilinear(),
            &ManufacturedSolution::sin_product(),
        );
        let us = ManufacturedSolution::sin_product();
        let r = |n: usize| {
            let g = Grid2D::unit_square(n).unwrap();
            let u = ScalarField::from_fn(g, |x| (us.u)(x));
            residual(&spec, &u).unwrap().max_abs()
        };
        let ratio = r(33) / r(65);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn unreachable_tolerance_fails_with_convergence_error() {
        let g = Grid2D::unit_square(9).unwrap();
        let opts = SolverOptions {
            residual_tol: 1e-30,
            max_newton_iters: 8,
            ..SolverOptions::default()
        };
        let spec = EquationSpec::mms_quasilinear();
        let err = newton_solve(&spec, &|_| 0.0, g, &opts).unwrap_err();
        assert!(matches!(err, LabError::Convergence { .. }));
    }

    #[test]
    fn options_are_validated() {
        let g = Grid2D::unit_square(5).unwrap();
        let bad = SolverOptions {
            damping: 1.5,
            ..SolverOptions::default()
        };
        assert!(newton_solve(&EquationSpec::laplace(), &|_| 0.0, g, &bad).is_err());
    }

    #[test]
    fn jacobian_matches_assembled_laplacian() {
        // For A = I the difference Jacobian equals the 5-point matrix.
        let g = Grid2D::unit_square(7).unwrap();
        let lay = Layout::new(&g);
        let spec = EquationSpec {
            name: "lap".into(),
            a: Arc::new(|_, _, _| [[1.0, 0.0], [0.0, 1.0]]),
            b: Arc::new(|_, _, _| 0.0),
            da_dp: None,
            da_dz: None,
            da_dx: None,
        };
        let u = vec![0.3; g.len()];
        let r0 = interior_residuals(&spec, &g, &u, false).unwrap();
        let jac = jacobian(&spec, &g, &u, &r0, &lay).unwrap();
        let c = 1.0 / (g.h() * g.h());
        for j in 1..6 {
            for i in 1..6 {
                let row = lay.unknown(i, j);
                assert!((jac.get(row, row) + 4.0 * c).abs() < 1e-5 * c);
                if i + 1 < 6 {
                    assert!((jac.get(row, lay.unknown(i + 1, j)) - c).abs() < 1e-5 * c);
                }
                if j + 1 < 6 && i + 1 < 6 {
                    assert!(jac.get(row, lay.unknown(i + 1, j + 1)).abs() < 1e-5 * c);
                }
            }
        }
    }
}
