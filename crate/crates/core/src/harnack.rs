//! Empirical weak Harnack constants
//!
//! ```text
//! (τR)^{-n} ∫_{B(y,2τR)} w ≤ K (inf_{B(y,τR)} w + τR)
//! ```
//!
//! for the nonnegative functions `w = V − v` with `V = sup_{B(y,R)} v`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, Result};
use crate::field::{Grid2D, Point, ScalarField};
use crate::sampler::Ball;
use crate::subsolution::{PsiPackage, Sign, DIM};

/// Subcells per axis for grid cells cut by the disc boundary.
const CLIP_SUBDIVISION: usize = 8;

/// Allowed negative round-off in `w`.
const NEGATIVE_SLACK: f64 = 1e-12;

/// One evaluation of the Harnack quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Khat {
    /// `(τR)^{-n}·∫_{B(y,2τR)} w`.
    pub numerator: f64,
    /// `inf` of `w` over the nodes of `B(y,τR)`.
    pub infimum: f64,
    pub khat: f64,
    /// The inner ball holds a single node.
    pub single_node: bool,
}

/// `K̂ = (τR)^{-n}∫_{B(y,2τR)} w / (inf_{B(y,τR)} w + τR)`.
///
/// The integral is a midpoint rule on grid cells (cell value = bilinear
/// value at the center), with cells cut by the circle refined into 8×8
/// subcells that are kept when their center lies in the disc.
pub fn khat(w: &ScalarField, y: Point, r: f64, tau: f64) -> Result<Khat> {
    if !(tau > 0.0 && tau < 0.5) {
        return input(format!("tau must lie in (0, 1/2), got {tau}"));
    }
    let g = w.grid();
    let outer = g.ball_nodes(y, r)?;
    if let Some(&k) = outer.iter().find(|&&k| w.values()[k] < -NEGATIVE_SLACK) {
        return input(format!(
            "w = {} < 0 at node {:?} inside B({y:?}, {r})",
            w.values()[k],
            g.node_at(k)
        ));
    }
    let rho = tau * r;
    let integral = disc_integral(w, y, 2.0 * rho);
    let numerator = integral / rho.powi(DIM as i32);
    let inner = g.ball_nodes(y, rho)?;
    let infimum = inner
        .iter()
        .map(|&k| w.values()[k])
        .fold(f64::INFINITY, f64::min);
    Ok(Khat {
        numerator,
        infimum,
        khat: numerator / (infimum + rho),
        single_node: inner.len() == 1,
    })
}

/// Cells `(i, j)` (lower-left node) meeting the closed disc `B(y, rho)`.
fn cells_meeting(g: &Grid2D, y: Point, rho: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
    let [a1, _, a2, _] = g.domain();
    let (hx, hy) = (g.hx(), g.hy());
    let lo = |c: f64, a: f64, h: f64| ((c - rho - a) / h).floor().max(0.0) as usize;
    let hi = |c: f64, a: f64, h: f64, n: usize| {
        (((c + rho - a) / h).ceil().max(0.0) as usize).min(n - 1)
    };
    let (i0, i1) = (lo(y[0], a1, hx), hi(y[0], a1, hx, g.nx()));
    let (j0, j1) = (lo(y[1], a2, hy), hi(y[1], a2, hy, g.ny()));
    (j0..j1).flat_map(move |j| (i0..i1).map(move |i| (i, j)))
}

/// Grid nodes whose values enter the quadrature over `B(y, rho)`.
pub fn quadrature_support(g: &Grid2D, y: Point, rho: f64) -> Vec<usize> {
    let mut nodes: Vec<usize> = cells_meeting(g, y, rho)
        .flat_map(|(i, j)| {
            [
                g.index(i, j),
                g.index(i + 1, j),
                g.index(i, j + 1),
                g.index(i + 1, j + 1),
            ]
        })
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

fn disc_integral(w: &ScalarField, y: Point, rho: f64) -> f64 {
    let g = w.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let inside = |p: Point| (p[0] - y[0]).hypot(p[1] - y[1]) < rho;
    let mut total = 0.0;
    for (i, j) in cells_meeting(g, y, rho) {
        let corners = [
            w.at(i, j),
            w.at(i + 1, j),
            w.at(i, j + 1),
            w.at(i + 1, j + 1),
        ];
        let bilinear = |s: f64, t: f64| {
            (1.0 - s) * (1.0 - t) * corners[0]
                + s * (1.0 - t) * corners[1]
                + (1.0 - s) * t * corners[2]
                + s * t * corners[3]
        };
        let p0 = g.node(i, j);
        let nearest = [y[0].clamp(p0[0], p0[0] + hx), y[1].clamp(p0[1], p0[1] + hy)];
        if !inside(nearest) {
            continue;
        }
        let farthest = [[0.0, 0.0], [hx, 0.0], [0.0, hy], [hx, hy]]
            .iter()
            .map(|d| (p0[0] + d[0] - y[0]).hypot(p0[1] + d[1] - y[1]))
            .fold(0.0, f64::max);
        if farthest < rho {
            total += hx * hy * bilinear(0.5, 0.5);
            continue;
        }
        let m = CLIP_SUBDIVISION;
        let sub = 1.0 / m as f64;
        for sj in 0..m {
            for si in 0..m {
                let (s, t) = ((si as f64 + 0.5) * sub, (sj as f64 + 0.5) * sub);
                if inside([p0[0] + s * hx, p0[1] + t * hy]) {
                    total += hx * hy * sub * sub * bilinear(s, t);
                }
            }
        }
    }
    total
}

/// One row of a [`HarnackReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnackSample {
    pub y: Point,
    pub r: f64,
    pub tau: f64,
    /// 0-based axis of `v_±^k`.
    pub axis: usize,
    pub sign: Sign,
    pub sup_v: f64,
    pub numerator: f64,
    pub infimum: f64,
    pub khat: f64,
    pub single_node: bool,
}

/// Per-sample quotients and their maximum `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackReport {
    pub samples: Vec<HarnackSample>,
    pub k: f64,
}

impl HarnackReport {
    pub const CSV_HEADER: &'static str =
        "y1,y2,R,tau,k,sign,sup_v,numerator,infimum,khat,single_node";

    /// One row per sample; `k` is written 1-based.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.samples {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.y[0],
                r.y[1],
                r.r,
                r.tau,
                r.axis + 1,
                r.sign.symbol(),
                r.sup_v,
                r.numerator,
                r.infimum,
                r.khat,
                r.single_node
            ));
        }
        s
    }

    pub fn single_node_count(&self) -> usize {
        self.samples.iter().filter(|s| s.single_node).count()
    }
}

/// Evaluates [`khat`] on every ball for every `v_±^k` of `pkg`.
///
/// `V` is the maximum of `v` over the nodes of `B(y, R)` together with the
/// nodes used by the quadrature over `B(y, 2τR)`; the latter only matters
/// when `2τR` is within a cell diagonal of `R`.
pub fn estimate_k(pkg: &PsiPackage, balls: &[Ball], tau: f64) -> Result<HarnackReport> {
    if balls.is_empty() {
        return input("no balls to evaluate");
    }
    let g = *pkg.grid();
    let mut vs = Vec::with_capacity(2 * DIM);
    for axis in 0..DIM {
        for sign in Sign::BOTH {
            vs.push((axis, sign, pkg.v_field(axis, sign)?));
        }
    }
    let rows: Vec<Result<Vec<HarnackSample>>> = balls
        .par_iter()
        .map(|ball| {
            let mut nodes = g.ball_nodes(ball.y, ball.r)?;
            nodes.extend(quadrature_support(&g, ball.y, 2.0 * tau * ball.r));
            let mut out = Vec::with_capacity(vs.len());
            for (axis, sign, v) in &vs {
                let sup_v = nodes
                    .iter()
                    .map(|&k| v.values()[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                let w = v.map(|x| sup_v - x);
                let q = khat(&w, ball.y, ball.r, tau)?;
                out.push(HarnackSample {
                    y: ball.y,
                    r: ball.r,
                    tau,
                    axis: *axis,
                    sign: *sign,
                    sup_v,
                    numerator: q.numerator,
                    infimum: q.infimum,
                    khat: q.khat,
                    single_node: q.single_node,
                });
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::with_capacity(balls.len() * vs.len());
    for r in rows {
        samples.extend(r?);
    }
    let k = samples.iter().map(|s| s.khat).fold(0.0, f64::max);
    Ok(HarnackReport { samples, k })
}
