//! The weighted distance `dist_γ(x₁, x₂) = sup_e |γ(x₁ − x₂)·e + |x₁|² − |x₂|²|`
//! together with diameters, greedy covers and packing numbers on finite
//! point clouds.
//!
//! The supremum over unit directions `e` has the closed form
//! `|γ||x₁ − x₂| + ||x₁|² − |x₂|²|`, since `a·e` sweeps `[−|a|, |a|]`.

use rayon::prelude::*;

use crate::error::{input, LabError, Result};

/// Exact pair scans are used up to this many points.
pub const EXACT_DIAM_LIMIT: usize = 4096;

/// Number of directions probed for convex-extremal diameter candidates.
const EXTREMAL_DIRECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMetric {
    gamma: f64,
}

impl GammaMetric {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma == 0.0 || !gamma.is_finite() {
            return input(format!("gamma must be finite and nonzero, got {gamma}"));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Closed-form `dist_γ`. Errors on dimension mismatch or non-finite input.
    pub fn dist(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        check_pair(x1, x2)?;
        Ok(self.dist_raw(x1, x2))
    }

    #[inline]
    pub(crate) fn dist_raw(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let mut diff2 = 0.0;
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        for (a, b) in x1.iter().zip(x2) {
            let d = a - b;
            diff2 += d * d;
            n1 += a * a;
            n2 += b * b;
        }
        self.gamma.abs() * diff2.sqrt() + (n1 - n2).abs()
    }

    /// Two-sided Euclidean sandwich
    /// `|γ||x₁−x₂| ≤ dist_γ ≤ (|γ| + |x₁| + |x₂|)|x₁−x₂|`.
    pub fn bounds(&self, x1: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
        check_pair(x1, x2)?;
        let e = norm(&sub(x1, x2));
        let g = self.gamma.abs();
        Ok((g * e, (g + norm(x1) + norm(x2)) * e))
    }

    /// Constants `(κ₁, κ₂)` with `κ₁·dist_γ(x,y) ≤ |x−y| ≤ κ₂·dist_γ(x,y)`
    /// for all `x, y ∈ B(0, R)`.
    pub fn euclidean_comparability(&self, radius: f64) -> Result<(f64, f64)> {
        if !(radius > 0.0) || !radius.is_finite() {
            return input(format!("radius must be positive, got {radius}"));
        }
        let g = self.gamma.abs();
        Ok((1.0 / (g + 2.0 * radius), 1.0 / g))
    }

    /// Maximal pairwise distance. Exact below [`EXACT_DIAM_LIMIT`] points,
    /// otherwise evaluated on a strided subsample augmented with extremal
    /// candidates (the result is then a lower bound, flagged).
    pub fn diam(&self, cloud: &PointCloud) -> Result<Diameter> {
        if cloud.is_empty() {
            return input("diameter of an empty cloud");
        }
        if cloud.len() <= EXACT_DIAM_LIMIT {
            let all: Vec<usize> = (0..cloud.len()).collect();
            return Ok(Diameter {
                value: self.max_pair(cloud, &all),
                subsampled: false,
            });
        }
        let candidates = diameter_candidates(cloud);
        Ok(Diameter {
            value: self.max_pair(cloud, &candidates),
            subsampled: true,
        })
    }

    fn max_pair(&self, cloud: &PointCloud, idx: &[usize]) -> f64 {
        idx.par_iter()
            .enumerate()
            .map(|(a, &i)| {
                let p = cloud.point(i);
                idx[a + 1..]
                    .iter()
                    .map(|&j| self.dist_raw(p, cloud.point(j)))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Greedy cover in index order: every still-uncovered point becomes a
    /// center and absorbs all points within `radius` (closed balls).
    pub fn greedy_cover(&self, cloud: &PointCloud, radius: f64) -> Result<CoverResult> {
        if !(radius > 0.0) {
            return input(format!("cover radius must be positive, got {radius}"));
        }
        let mut assignment = vec![usize::MAX; cloud.len()];
        let mut centers = Vec::new();
        for i in 0..cloud.len() {
            if assignment[i] != usize::MAX {
                continue;
            }
            let c = centers.len();
            centers.push(i);
            let p = cloud.point(i);
            for (j, slot) in assignment.iter_mut().enumerate().skip(i) {
                if *slot == usize::MAX && self.dist_raw(p, cloud.point(j)) <= radius {
                    *slot = c;
                }
            }
        }
        Ok(CoverResult {
            centers,
            radius,
            assignment,
        })
    }

    /// Size of a greedily built maximal subset with pairwise distances
    /// `≥ separation`.
    pub fn packing_number(&self, cloud: &PointCloud, separation: f64) -> Result<usize> {
        if !(separation > 0.0) {
            return input(format!("separation must be positive, got {separation}"));
        }
        let mut chosen: Vec<usize> = Vec::new();
        for i in 0..cloud.len() {
            let p = cloud.point(i);
            if chosen
                .iter()
                .all(|&c| self.dist_raw(p, cloud.point(c)) >= separation)
            {
                chosen.push(i);
            }
        }
        Ok(chosen.len())
    }
}

/// Result of [`GammaMetric::diam`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diameter {
    pub value: f64,
    pub subsampled: bool,
}

/// A cover of a cloud by `dist_γ` balls centered at cloud members.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverResult {
    /// Indices (into the cloud) of the ball centers.
    pub centers: Vec<usize>,
    pub radius: f64,
    /// `assignment[i]` is the position in `centers` covering point `i`.
    pub assignment: Vec<usize>,
}

impl CoverResult {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// A finite set of points in `ℝⁿ`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return input(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return input("point cloud contains non-finite coordinates");
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let Some(first) = points.first() else {
            return input("point cloud must be nonempty");
        };
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return input("points of mixed dimension");
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Restriction to the given point indices, in that order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud {
            dim: self.dim,
            coords,
        }
    }

    /// One point per row, columns `x1..xn`, preceded by a header row.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        let mut out = header.join(",");
        out.push('\n');
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LabError::Input("empty point CSV".into()))?;
        let dim = header.split(',').count();
        let mut coords = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != dim {
                return input(format!(
                    "row {} has {} columns, expected {dim}",
                    row + 1,
                    vals.len()
                ));
            }
            for v in vals {
                coords.push(v.trim().parse::<f64>().map_err(|e| {
                    LabError::Input(format!("row {}: cannot parse {v:?}: {e}", row + 1))
                })?);
            }
        }
        if coords.is_empty() {
            return input("point CSV has no rows");
        }
        Self::new(dim, coords)
    }
}

fn diameter_candidates(cloud: &PointCloud) -> Vec<usize> {
    let n = cloud.len();
    let stride = n.div_ceil(EXACT_DIAM_LIMIT);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();

    let sq = |i: usize| cloud.point(i).iter().map(|v| v * v).sum::<f64>();
    let argmax =
        |f: &dyn Fn(usize) -> f64| (0..n).fold(0, |best, i| if f(i) > f(best) { i } else { best });
    idx.push(argmax(&sq));
    idx.push(argmax(&|i| -sq(i)));
    if cloud.dim() == 2 {
        for k in 0..EXTREMAL_DIRECTIONS {
            let t = std::f64::consts::TAU * k as f64 / EXTREMAL_DIRECTIONS as f64;
            let (s, c) = t.sin_cos();
            idx.push(argmax(&|i| {
                let p = cloud.point(i);
                c * p[0] + s * p[1]
            }));
        }
    } else {
        for axis in 0..cloud.dim() {
            idx.push(argmax(&|i| cloud.point(i)[axis]));
            idx.push(argmax(&|i| -cloud.point(i)[axis]));
        }
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

fn check_pair(x1: &[f64], x2: &[f64]) -> Result<()> {
    if x1.len() != x2.len() {
        return input(format!("dimension mismatch: {} vs {}", x1.len(), x2.len()));
    }
    if x1.iter().chain(x2).any(|v| !v.is_finite()) {
        return input("non-finite point coordinate");
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
