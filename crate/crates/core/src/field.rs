//! Uniform 2-D grids, nodal scalar/vector fields and their discrete
//! derivatives.

use crate::error::{input, LabError, Result};
use crate::gamma_metric::PointCloud;

/// A point in the plane.
pub type Point = [f64; 2];

/// Uniform tensor grid on `[a1,b1]×[a2,b2]` with `nx × ny` nodes.
/// Node `(i, j)` sits at `(a1 + i·hx, a2 + j·hy)` and is stored at
/// `j·nx + i`.
/// Relative size below which differences of discrete data are treated as
/// round-off of the solver output.
pub const ROUNDOFF_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    domain: [f64; 4],
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, domain: [f64; 4]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return input(format!(
                "grid needs at least 3 nodes per axis, got {nx}×{ny}"
            ));
        }
        let [a1, b1, a2, b2] = domain;
        if !(b1 > a1) || !(b2 > a2) || domain.iter().any(|v| !v.is_finite()) {
            return input(format!("degenerate domain {domain:?}"));
        }
        Ok(Self { nx, ny, domain })
    }

    /// `n × n` nodes on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, [0.0, 1.0, 0.0, 1.0])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> [f64; 4] {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hx(&self) -> f64 {
        (self.domain[1] - self.domain[0]) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.domain[3] - self.domain[2]) / (self.ny - 1) as f64
    }

    /// Largest spacing.
    pub fn h(&self) -> f64 {
        self.hx().max(self.hy())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [
            self.domain[0] + i as f64 * self.hx(),
            self.domain[2] + j as f64 * self.hy(),
        ]
    }

    pub fn node_at(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        self.node(i, j)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Euclidean diameter of the domain rectangle.
    pub fn diameter(&self) -> f64 {
        let [a1, b1, a2, b2] = self.domain;
        (b1 - a1).hypot(b2 - a2)
    }

    /// Distance from `p` to the domain boundary (negative outside).
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        let [a1, b1, a2, b2] = self.domain;
        (p[0] - a1).min(b1 - p[0]).min(p[1] - a2).min(b2 - p[1])
    }

    /// Grid node nearest to `p` (clamped to the domain).
    pub fn nearest_node(&self, p: Point) -> (usize, usize) {
        let fi = ((p[0] - self.domain[0]) / self.hx()).round();
        let fj = ((p[1] - self.domain[2]) / self.hy()).round();
        (
            fi.clamp(0.0, (self.nx - 1) as f64) as usize,
            fj.clamp(0.0, (self.ny - 1) as f64) as usize,
        )
    }

    /// Indices of the nodes in the open ball `B(y, r)`. The ball must lie
    /// inside the (closed) domain and contain at least one node.
    pub fn ball_nodes(&self, y: Point, r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return input(format!("ball radius must be positive, got {r}"));
        }
        let slack = 1e-12 * self.diameter();
        if self.distance_to_boundary(y) < r - slack {
            return input(format!("ball B({y:?}, {r}) is not inside the domain"));
        }
        let (hx, hy) = (self.hx(), self.hy());
        let [a1, _, a2, _] = self.domain;
        let lo = |c: f64, a: f64, h: f64| (((c - r - a) / h).floor().max(0.0)) as usize;
        let hi = |c: f64, a: f64, h: f64, n: usize| (((c + r - a) / h).ceil() as usize).min(n - 1);
        let mut out = Vec::new();
        for j in lo(y[1], a2, hy)..=hi(y[1], a2, hy, self.ny) {
            for i in lo(y[0], a1, hx)..=hi(y[0], a1, hx, self.nx) {
                let p = self.node(i, j);
                if (p[0] - y[0]).hypot(p[1] - y[1]) < r {
                    out.push(self.index(i, j));
                }
            }
        }
        if out.is_empty() {
            return input(format!("ball B({y:?}, {r}) contains no grid node"));
        }
        Ok(out)
    }
}

/// Nodal values on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return input(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.node_at(k))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a·self + b·other` on a shared grid.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return input("grid mismatch");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Central differences inside, one-sided three-point stencils on the
    /// boundary; second order everywhere and exact on quadratics.
    pub fn gradient(&self) -> VectorField {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.hx(), g.hy());
        let mut dx = vec![0.0; g.len()];
        let mut dy = vec![0.0; g.len()];
        for j in 0..ny {
            for i in 0..nx {
                let k = g.index(i, j);
                dx[k] = diff(|t| self.at(t, j), i, nx, hx);
                dy[k] = diff(|t| self.at(i, t), j, ny, hy);
            }
        }
        VectorField {
            components: [
                ScalarField {
                    grid: g,
                    values: dx,
                },
                ScalarField {
                    grid: g,
                    values: dy,
                },
            ],
        }
    }

    /// Four header lines (`nx`, `ny`, `domain`, `field`) followed by one
    /// row of `nx` values per grid row `j`.
    pub fn to_csv(&self, name: &str) -> String {
        let [a1, b1, a2, b2] = self.grid.domain;
        let mut out = format!(
            "nx,{}\nny,{}\ndomain,{a1},{b1},{a2},{b2}\nfield,{name}\n",
            self.grid.nx, self.grid.ny
        );
        for row in self.values.chunks_exact(self.grid.nx) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses [`ScalarField::to_csv`] output; lines starting with `#` are
    /// skipped. Returns the field and its name.
    pub fn from_csv(text: &str) -> Result<(Self, String)> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| LabError::Input(format!("missing `{key}` header line")))?;
            let mut parts = line.split(',').map(|s| s.trim().to_string());
            if parts.next().as_deref() != Some(key) {
                return input(format!("expected `{key}` header, found {line:?}"));
            }
            Ok(parts.collect())
        };
        let parse_usize = |v: &[String], key: &str| -> Result<usize> {
            v.first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| LabError::Input(format!("bad `{key}` header")))
        };
        let nx = parse_usize(&header("nx")?, "nx")?;
        let ny = parse_usize(&header("ny")?, "ny")?;
        let dom = header("domain")?;
        if dom.len() != 4 {
            return input("`domain` header needs 4 numbers");
        }
        let mut domain = [0.0; 4];
        for (d, s) in domain.iter_mut().zip(&dom) {
            *d = s
                .parse()
                .map_err(|_| LabError::Input(format!("bad domain value {s:?}")))?;
        }
        let name = header("field")?.join(",");
        let grid = Grid2D::new(nx, ny, domain)?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            for s in line.split(',') {
                values.push(
                    s.trim()
                        .parse()
                        .map_err(|_| LabError::Input(format!("bad field value {s:?}")))?,
                );
            }
        }
        Ok((Self::new(grid, values)?, name))
    }
}

fn diff(f: impl Fn(usize) -> f64, t: usize, n: usize, h: f64) -> f64 {
    if t == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if t + 1 == n {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(t + 1) - f(t - 1)) / (2.0 * h)
    }
}

/// A two-component field `ψ = (ψ¹, ψ²)` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: [ScalarField; 2],
}

impl VectorField {
    pub fn new(c1: ScalarField, c2: ScalarField) -> Result<Self> {
        if c1.grid != c2.grid {
            return input("vector field components live on different grids");
        }
        Ok(Self {
            components: [c1, c2],
        })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> Point) -> Self {
        let vals: Vec<Point> = (0..grid.len()).map(|k| f(grid.node_at(k))).collect();
        Self {
            components: [
                ScalarField {
                    grid,
                    values: vals.iter().map(|v| v[0]).collect(),
                },
                ScalarField {
                    grid,
                    values: vals.iter().map(|v| v[1]).collect(),
                },
            ],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.components[0].grid
    }

    pub fn component(&self, k: usize) -> &ScalarField {
        &self.components[k]
    }

    #[inline]
    pub fn value(&self, idx: usize) -> Point {
        [
            self.components[0].values[idx],
            self.components[1].values[idx],
        ]
    }

    /// Nodewise `|ψ|`.
    pub fn norm_field(&self) -> ScalarField {
        let g = *self.grid();
        ScalarField {
            grid: g,
            values: (0..g.len())
                .map(|k| {
                    let v = self.value(k);
                    v[0].hypot(v[1])
                })
                .collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.norm_field().max_abs()
    }

    /// Image `{ψ(node) : |node − y| < R}` of the open Euclidean ball.
    pub fn restrict(&self, y: Point, r: f64) -> Result<PointCloud> {
        let nodes = self.grid().ball_nodes(y, r)?;
        Ok(self.image(&nodes))
    }

    /// `ψ` evaluated at the given nodes.
    pub fn image(&self, nodes: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(2 * nodes.len());
        for &k in nodes {
            coords.extend_from_slice(&self.value(k));
        }
        PointCloud::new(2, coords).expect("finite field values")
    }
}

/// `ψ(x) = |x|^{β−1} x` with `ψ(0) = 0`: Hölder continuous with exponent
/// exactly `β` at the origin.
pub fn analytic_holder_field(beta: f64, grid: Grid2D) -> Result<VectorField> {
    if !(beta > 0.0 && beta <= 1.0) {
        return input(format!("beta must lie in (0, 1], got {beta}"));
    }
    let [a1, b1, a2, b2] = grid.domain();
    if !(a1 <= 0.0 && 0.0 <= b1 && a2 <= 0.0 && 0.0 <= b2) {
        return input("analytic Hölder field needs the origin in the closed domain");
    }
    Ok(VectorField::from_fn(grid, |x| holder_map(beta, x)))
}

pub(crate) fn holder_map(beta: f64, x: Point) -> Point {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let s = r.powf(beta - 1.0);
    [s * x[0], s * x[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_validation() {
        assert!(Grid2D::new(2, 5, [0.0, 1.0, 0.0, 1.0]).is_err());
        assert!(Grid2D::new(5, 5, [1.0, 1.0, 0.0, 1.0]).is_err());
        let g = Grid2D::unit_square(5).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.node(4, 2), [1.0, 0.5]);
        assert_eq!(g.ij(g.index(3, 1)), (3, 1));
    }

    #[test]
    fn gradient_of_constant_and_affine() {
        let g = Grid2D::unit_square(9).unwrap();
        let c = ScalarField::constant(g, 5.0).gradient();
        assert!(c.sup_norm() == 0.0);
        let u = ScalarField::from_fn(g, |x| 2.0 * x[0] + 3.0 * x[1]);
        let du = u.gradient();
        for k in 0..g.len() {
            let v = du.value(k);
            assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_exact_on_quadratics() {
        let g = Grid2D::new(7, 9, [-1.0, 2.0, 0.0, 1.0]).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] - 3.0 * x[0] * x[1] + 0.5 * x[1] * x[1]);
        let du = u.gradient();
        for k in 0..g.len() {
            let x = g.node_at(k);
            let v = du.value(k);
            assert!((v[0] - (2.0 * x[0] - 3.0 * x[1])).abs() < 1e-11);
            assert!((v[1] - (-3.0 * x[0] + x[1])).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_second_order_refinement() {
        let err = |n: usize| {
            let g = Grid2D::unit_square(n).unwrap();
            let u = ScalarField::from_fn(g, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
            let du = u.gradient();
            (0..g.len())
                .map(|k| {
                    let x = g.node_at(k);
                    let ex = [
                        PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                        PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                    ];
                    let v = du.value(k);
                    (v[0] - ex[0]).abs().max((v[1] - ex[1]).abs())
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn holder_field_values() {
        let g = Grid2D::new(5, 5, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let id = analytic_holder_field(1.0, g).unwrap();
        for k in 0..g.len() {
            assert_eq!(id.value(k), g.node_at(k));
        }
        let v = holder_map(0.5, [0.25, 0.0]);
        assert!((v[0] - 0.5).abs() < 1e-15 && v[1] == 0.0);
        assert!(analytic_holder_field(0.0, g).is_err());
        assert!(analytic_holder_field(1.5, g).is_err());
        let off = Grid2D::new(5, 5, [0.5, 1.0, 0.5, 1.0]).unwrap();
        assert!(analytic_holder_field(0.5, off).is_err());
    }

    #[test]
    fn restrict_examples() {
        let g = Grid2D::unit_square(11).unwrap();
        let id = VectorField::from_fn(g, |x| x);
        let single = id.restrict([0.5, 0.5], 0.04).unwrap();
        assert_eq!(single.len(), 1);
        let disc = id.restrict([0.5, 0.5], 0.3).unwrap();
        let expected: Vec<Point> = (0..g.len())
            .map(|k| g.node_at(k))
            .filter(|p| (p[0] - 0.5).hypot(p[1] - 0.5) < 0.3)
            .collect();
        assert_eq!(disc, PointCloud::from_points(&expected).unwrap());
        assert!(id.restrict([0.1, 0.5], 0.3).is_err());
        assert!(id.restrict([0.55, 0.55], 0.01).is_err());
    }

    #[test]
    fn restrict_counts_lattice_points() {
        let g = Grid2D::unit_square(129).unwrap();
        let h = g.h();
        for &r in &[10.0 * h, 20.0 * h, 0.4] {
            let n = g.ball_nodes([0.5, 0.5], r).unwrap().len() as f64;
            let expect = PI * r * r / (h * h);
            assert!((n / expect - 1.0).abs() < 0.2, "r={r}: {n} vs {expect}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid2D::new(4, 3, [0.0, 3.0, -1.0, 1.0]).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0].exp() - x[1] / 3.0);
        let text = format!("# header\n{}", u.to_csv("u"));
        let (back, name) = ScalarField::from_csv(&text).unwrap();
        assert_eq!(name, "u");
        assert_eq!(back, u);
        assert!(ScalarField::from_csv("nx,4\nny,3\n").is_err());
    }
}
