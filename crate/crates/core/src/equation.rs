//! Quasilinear operators `A^{ij}(x,u,Du) D_{ij}u + B(x,u,Du)` in two
//! dimensions, their coefficient derivatives and structural bounds.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{input, LabError, Result};
use crate::expr::Expr;
use crate::field::Point;

/// Symmetric 2×2 matrix, row-major.
pub type Mat2 = [[f64; 2]; 2];

pub type MatrixFn = Arc<dyn Fn(Point, f64, Point) -> Mat2 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point, f64, Point) -> f64 + Send + Sync>;
/// Derivative of `A` along each of two coordinates: `out[l] = ∂A/∂(·)_l`.
pub type MatrixPairFn = Arc<dyn Fn(Point, f64, Point) -> [Mat2; 2] + Send + Sync>;

/// Relative step for finite-difference coefficient derivatives.
const COEF_FD_STEP: f64 = 1e-5;

/// Coefficients of a quasilinear equation. Missing derivative callables
/// fall back to central differences.
#[derive(Clone)]
pub struct EquationSpec {
    pub name: String,
    pub a: MatrixFn,
    pub b: ScalarFn,
    pub da_dp: Option<MatrixPairFn>,
    pub da_dz: Option<MatrixFn>,
    pub da_dx: Option<MatrixPairFn>,
}

impl fmt::Debug for EquationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquationSpec")
            .field("name", &self.name)
            .field("analytic_da_dp", &self.da_dp.is_some())
            .field("analytic_da_dz", &self.da_dz.is_some())
            .field("analytic_da_dx", &self.da_dx.is_some())
            .finish()
    }
}

impl EquationSpec {
    pub fn new(name: impl Into<String>, a: MatrixFn, b: ScalarFn) -> Self {
        Self {
            name: name.into(),
            a,
            b,
            da_dp: None,
            da_dz: None,
            da_dx: None,
        }
    }

    /// `Δu = 0`.
    pub fn laplace() -> Self {
        let mut s = Self::new(
            "laplace",
            Arc::new(|_, _, _| IDENTITY),
            Arc::new(|_, _, _| 0.0),
        );
        s.da_dp = Some(Arc::new(|_, _, _| [ZERO; 2]));
        s.da_dz = Some(Arc::new(|_, _, _| ZERO));
        s.da_dx = Some(Arc::new(|_, _, _| [ZERO; 2]));
        s
    }

    /// Minimal surface operator `A = (1+|p|²)I − p⊗p`, `B = 0`.
    pub fn minimal_surface() -> Self {
        let mut s = Self::new(
            "minimal_surface",
            Arc::new(|_, _, p| {
                [
                    [1.0 + p[1] * p[1], -p[0] * p[1]],
                    [-p[0] * p[1], 1.0 + p[0] * p[0]],
                ]
            }),
            Arc::new(|_, _, _| 0.0),
        );
        s.da_dp = Some(Arc::new(|_, _, p| {
            [
                [[0.0, -p[1]], [-p[1], 2.0 * p[0]]],
                [[2.0 * p[1], -p[0]], [-p[0], 0.0]],
            ]
        }));
        s.da_dz = Some(Arc::new(|_, _, _| ZERO));
        s.da_dx = Some(Arc::new(|_, _, _| [ZERO; 2]));
        s
    }

    /// `A = (1+|p|²)I`, `B = 0`: the operator underlying the manufactured
    /// test problem.
    pub fn isotropic_quasilinear() -> Self {
        let mut s = Self::new(
            "isotropic_quasilinear",
            Arc::new(|_, _, p| {
                let c = 1.0 + p[0] * p[0] + p[1] * p[1];
                [[c, 0.0], [0.0, c]]
            }),
            Arc::new(|_, _, _| 0.0),
        );
        s.da_dp = Some(Arc::new(|_, _, p| {
            let d = |t: f64| [[2.0 * t, 0.0], [0.0, 2.0 * t]];
            [d(p[0]), d(p[1])]
        }));
        s.da_dz = Some(Arc::new(|_, _, _| ZERO));
        s.da_dx = Some(Arc::new(|_, _, _| [ZERO; 2]));
        s
    }

    /// The manufactured problem with `u* = sin(πx)sin(πy)` for
    /// [`EquationSpec::isotropic_quasilinear`].
    pub fn mms_quasilinear() -> Self {
        let mut s = mms_source(
            &Self::isotropic_quasilinear(),
            &ManufacturedSolution::sin_product(),
        );
        s.name = "mms_quasilinear".into();
        s
    }

    /// Built-in registry.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "laplace" => Ok(Self::laplace()),
            "minimal_surface" => Ok(Self::minimal_surface()),
            "mms_quasilinear" => Ok(Self::mms_quasilinear()),
            _ => input(format!(
                "unknown equation {name:?} (known: laplace, minimal_surface, mms_quasilinear)"
            )),
        }
    }

    pub fn registry_names() -> &'static [&'static str] {
        &["laplace", "minimal_surface", "mms_quasilinear"]
    }

    /// Coefficients given as expressions in `x1, x2, z, p1, p2`; all
    /// derivatives by central differences.
    pub fn from_expressions(name: &str, a11: &str, a12: &str, a22: &str, b: &str) -> Result<Self> {
        let (a11, a12, a22, b) = (
            Expr::parse(a11)?,
            Expr::parse(a12)?,
            Expr::parse(a22)?,
            Expr::parse(b)?,
        );
        let vars = |x: Point, z: f64, p: Point| [x[0], x[1], z, p[0], p[1]];
        Ok(Self::new(
            name,
            Arc::new(move |x, z, p| {
                let v = vars(x, z, p);
                let off = a12.eval(&v);
                [[a11.eval(&v), off], [off, a22.eval(&v)]]
            }),
            Arc::new(move |x, z, p| b.eval(&vars(x, z, p))),
        ))
    }

    #[inline]
    pub fn a_at(&self, x: Point, z: f64, p: Point) -> Mat2 {
        (self.a)(x, z, p)
    }

    #[inline]
    pub fn b_at(&self, x: Point, z: f64, p: Point) -> f64 {
        (self.b)(x, z, p)
    }

    /// `∂A/∂p_l` for `l = 1, 2`.
    pub fn da_dp_at(&self, x: Point, z: f64, p: Point) -> [Mat2; 2] {
        match &self.da_dp {
            Some(f) => f(x, z, p),
            None => [0, 1].map(|l| {
                let h = COEF_FD_STEP * (1.0 + p[l].abs());
                let (mut pp, mut pm) = (p, p);
                pp[l] += h;
                pm[l] -= h;
                mat_scale(mat_sub(self.a_at(x, z, pp), self.a_at(x, z, pm)), 0.5 / h)
            }),
        }
    }

    pub fn da_dz_at(&self, x: Point, z: f64, p: Point) -> Mat2 {
        match &self.da_dz {
            Some(f) => f(x, z, p),
            None => {
                let h = COEF_FD_STEP * (1.0 + z.abs());
                mat_scale(
                    mat_sub(self.a_at(x, z + h, p), self.a_at(x, z - h, p)),
                    0.5 / h,
                )
            }
        }
    }

    /// `∂A/∂x_l` for `l = 1, 2`.
    pub fn da_dx_at(&self, x: Point, z: f64, p: Point) -> [Mat2; 2] {
        match &self.da_dx {
            Some(f) => f(x, z, p),
            None => [0, 1].map(|l| {
                let h = COEF_FD_STEP * (1.0 + x[l].abs());
                let (mut xp, mut xm) = (x, x);
                xp[l] += h;
                xm[l] -= h;
                mat_scale(mat_sub(self.a_at(xp, z, p), self.a_at(xm, z, p)), 0.5 / h)
            }),
        }
    }

    /// `(λ, Λ)` of `A(x,z,p)`, or a structure error if `A` is not positive
    /// definite there.
    pub fn ellipticity(&self, x: Point, z: f64, p: Point) -> Result<(f64, f64)> {
        let (lo, hi) = sym_eigen(self.a_at(x, z, p));
        if !(lo > 0.0) {
            return Err(LabError::Structure {
                location: format!("x={x:?}, z={z}, p={p:?}"),
                detail: format!("minimal eigenvalue {lo} of A is not positive"),
            });
        }
        Ok((lo, hi))
    }
}

/// An exact solution with analytic first and second derivatives.
#[derive(Clone)]
pub struct ManufacturedSolution {
    pub u: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub grad: Arc<dyn Fn(Point) -> Point + Send + Sync>,
    pub hessian: Arc<dyn Fn(Point) -> Mat2 + Send + Sync>,
}

impl ManufacturedSolution {
    /// `u* = sin(πx)·sin(πy)`.
    pub fn sin_product() -> Self {
        Self {
            u: Arc::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin()),
            grad: Arc::new(|x| {
                let (s1, c1) = (PI * x[0]).sin_cos();
                let (s2, c2) = (PI * x[1]).sin_cos();
                [PI * c1 * s2, PI * s1 * c2]
            }),
            hessian: Arc::new(|x| {
                let (s1, c1) = (PI * x[0]).sin_cos();
                let (s2, c2) = (PI * x[1]).sin_cos();
                let pp = PI * PI;
                [[-pp * s1 * s2, pp * c1 * c2], [pp * c1 * c2, -pp * s1 * s2]]
            }),
        }
    }

    /// A quadratic `½xᵀHx + g·x + c`.
    pub fn quadratic(h: Mat2, g: Point, c: f64) -> Self {
        Self {
            u: Arc::new(move |x| {
                0.5 * (h[0][0] * x[0] * x[0] + 2.0 * h[0][1] * x[0] * x[1] + h[1][1] * x[1] * x[1])
                    + g[0] * x[0]
                    + g[1] * x[1]
                    + c
            }),
            grad: Arc::new(move |x| {
                [
                    h[0][0] * x[0] + h[0][1] * x[1] + g[0],
                    h[1][0] * x[0] + h[1][1] * x[1] + g[1],
                ]
            }),
            hessian: Arc::new(move |_| h),
        }
    }
}

/// Replaces `B` by `B̃ = B − [A^{ij}(x,u*,Du*)D_{ij}u* + B(x,u*,Du*)]`, so
/// that `u*` solves the modified equation exactly.
pub fn mms_source(spec: &EquationSpec, u_star: &ManufacturedSolution) -> EquationSpec {
    let base = spec.clone();
    let us = u_star.clone();
    let mut out = spec.clone();
    out.name = format!("{}+mms", spec.name);
    out.b = Arc::new(move |x, z, p| {
        let (u, du, d2u) = ((us.u)(x), (us.grad)(x), (us.hessian)(x));
        let a = base.a_at(x, u, du);
        let lu = contract(a, d2u) + base.b_at(x, u, du);
        base.b_at(x, z, p) - lu
    });
    out
}

/// Empirical structure bound `θ₁(ρ)` and the observed ellipticity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureBounds {
    pub rho: f64,
    pub theta1: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Evaluates `(|A| + |D_pA| + |D_zA| + |D_xA| + |B|)/λ` over `samples`
/// Halton points of `{|z| + |p| ≤ ρ} × domain` and returns the maximum.
/// Norms are Frobenius norms over all tensor indices.
pub fn theta1_probe(
    spec: &EquationSpec,
    rho: f64,
    samples: usize,
    domain: [f64; 4],
) -> Result<StructureBounds> {
    if samples == 0 {
        return input("theta1_probe needs at least one sample");
    }
    if !(rho >= 0.0) {
        return input(format!("rho must be nonnegative, got {rho}"));
    }
    let pts: Vec<(Point, f64, Point)> = (1..=samples)
        .map(|k| {
            let h = [2, 3, 5, 7, 11].map(|b| halton(k, b));
            let x = [
                domain[0] + h[0] * (domain[1] - domain[0]),
                domain[2] + h[1] * (domain[3] - domain[2]),
            ];
            let z = 2.0 * h[2] - 1.0;
            let r = (1.0 - z.abs()) * h[3].sqrt();
            let t = 2.0 * PI * h[4];
            (x, rho * z, [rho * r * t.cos(), rho * r * t.sin()])
        })
        .collect();
    theta1_on(spec, rho, &pts)
}

/// [`theta1_probe`] on an explicit sample set.
pub fn theta1_on(
    spec: &EquationSpec,
    rho: f64,
    samples: &[(Point, f64, Point)],
) -> Result<StructureBounds> {
    let mut out = StructureBounds {
        rho,
        theta1: 0.0,
        lambda_min: f64::INFINITY,
        lambda_max: 0.0,
    };
    for &(x, z, p) in samples {
        let (lo, hi) = spec.ellipticity(x, z, p)?;
        let dp = spec.da_dp_at(x, z, p);
        let dx = spec.da_dx_at(x, z, p);
        let s = frob(spec.a_at(x, z, p))
            + frob2(dp)
            + frob(spec.da_dz_at(x, z, p))
            + frob2(dx)
            + spec.b_at(x, z, p).abs();
        out.theta1 = out.theta1.max(s / lo);
        out.lambda_min = out.lambda_min.min(lo);
        out.lambda_max = out.lambda_max.max(hi);
    }
    Ok(out)
}

fn halton(mut k: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
pub const ZERO: Mat2 = [[0.0, 0.0], [0.0, 0.0]];

/// `Σ_{ij} a_{ij} b_{ij}`.
#[inline]
pub fn contract(a: Mat2, b: Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Eigenvalues `(min, max)` of a symmetric 2×2 matrix.
pub fn sym_eigen(a: Mat2) -> (f64, f64) {
    let m = 0.5 * (a[0][0] + a[1][1]);
    let off = 0.5 * (a[0][1] + a[1][0]);
    let r = (0.5 * (a[0][0] - a[1][1])).hypot(off);
    (m - r, m + r)
}

pub(crate) fn frob(a: Mat2) -> f64 {
    contract(a, a).sqrt()
}

fn frob2(a: [Mat2; 2]) -> f64 {
    (contract(a[0], a[0]) + contract(a[1], a[1])).sqrt()
}

fn mat_sub(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

fn mat_scale(a: Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}
