//! Covering and oscillation-decay experiments on `ψ(B(y, R))` in the metric
//! `dist_γ*`: the constant pipeline `(c₀, N′, ε₀, δ, δ₀, α)`, ball
//! elimination, the halving property, dyadic decay traces and Hölder
//! seminorms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, Result};
use crate::field::{Grid2D, Point, VectorField, ROUNDOFF_REL};
use crate::gamma_metric::{GammaMetric, PointCloud};
use crate::sampler::Ball;
use crate::subsolution::PsiPackage;

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// The constants of the elimination and decay arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalConstants {
    pub n: usize,
    pub mu: f64,
    pub k: f64,
    pub nprime: usize,
    pub ndprime: usize,
    pub c0: f64,
    pub eps0: f64,
    pub delta: f64,
    /// `δ₀ = δ^{max(N″−1, 1)}`; may underflow to 0, see `log_delta0`.
    pub delta0: f64,
    pub log_delta0: f64,
    pub alpha: f64,
    /// `K = 0`: δ and ε₀ fall back to their caps.
    pub degenerate: bool,
}

/// `c₀ = μ/(32√n)`,
/// `ε₀ = min{(1/5)·2^{n−6}|B₁|/(√n K N′), 1/(128√n)}`,
/// `δ = min{0.499, 2^{n−1}|B₁|/(64√n N′ K)}`,
/// `δ₀ = δ^{max(N″−1, 1)}`, `α = log_{δ₀}(1/2)`.
pub fn constants(
    n: usize,
    mu: f64,
    k: f64,
    nprime: usize,
    ndprime: usize,
) -> Result<TheoreticalConstants> {
    if n == 0 {
        return input("dimension must be positive");
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return input(format!("mu must be positive and finite, got {mu}"));
    }
    if !(k >= 0.0 && k.is_finite()) {
        return input(format!("K must be nonnegative and finite, got {k}"));
    }
    if nprime == 0 || ndprime == 0 {
        return input("N′ and N″ must be at least 1");
    }
    let sn = (n as f64).sqrt();
    let b1 = unit_ball_volume(n);
    let cap = 1.0 / (128.0 * sn);
    let degenerate = k == 0.0;
    let (eps0, delta) = if degenerate {
        (cap, 0.499)
    } else {
        let np = nprime as f64;
        let e = (0.2 * 2f64.powi(n as i32 - 6) * b1 / (sn * k * np)).min(cap);
        let d = (2f64.powi(n as i32 - 1) * b1 / (64.0 * sn * np * k)).min(0.499);
        (e, d)
    };
    let exponent = ndprime.saturating_sub(1).max(1) as f64;
    let log_delta0 = exponent * delta.ln();
    Ok(TheoreticalConstants {
        n,
        mu,
        k,
        nprime,
        ndprime,
        c0: mu / (32.0 * sn),
        eps0,
        delta,
        delta0: log_delta0.exp(),
        log_delta0,
        alpha: std::f64::consts::LN_2 / -log_delta0,
        degenerate,
    })
}

impl TheoreticalConstants {
    /// Violated invariants, empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cap = 1.0 / (128.0 * (self.n as f64).sqrt());
        if !(self.eps0 > 0.0 && self.eps0 <= cap) {
            out.push(format!("eps0 = {} outside (0, {cap}]", self.eps0));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            out.push(format!("delta = {} outside (0, 1/2)", self.delta));
        }
        if !(self.log_delta0 <= self.delta.ln() && self.log_delta0 < -std::f64::consts::LN_2) {
            out.push(format!(
                "delta0 = exp({}) not ≤ delta < 1/2",
                self.log_delta0
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        let back = std::f64::consts::LN_2 / -self.log_delta0;
        if (back - self.alpha).abs() > 1e-12 * self.alpha {
            out.push("alpha ≠ log_{δ₀}(1/2)".to_string());
        }
        out
    }
}

/// `α = log_{δ₀}(1/2)` for `δ₀ ∈ (0, 1/2)`.
pub fn alpha_from_delta0(delta0: f64) -> Result<f64> {
    if !(delta0 > 0.0 && delta0 < 0.5) {
        return input(format!("delta0 must lie in (0, 1/2), got {delta0}"));
    }
    Ok(0.5f64.ln() / delta0.ln())
}

/// Per-ball inputs of [`measure_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallMeasurement {
    pub y: Point,
    pub r: f64,
    pub mu: f64,
    pub packing: usize,
    pub cover: usize,
}

/// Constants measured on sampled balls, with the per-ball inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasuredConstants {
    pub constants: TheoreticalConstants,
    pub balls: Vec<BallMeasurement>,
}

/// `dist_γ` diameters of `ψ`-images at or below `ROUNDOFF_REL·|γ|·M` count
/// as constant images.
pub fn constant_floor(m: &GammaMetric, psi: &VectorField) -> f64 {
    ROUNDOFF_REL * m.gamma().abs() * psi.sup_norm().max(1.0)
}

/// Feeds measured quantities into [`constants`]: on each ball `μ = diam/2`
/// of `ψ(B(y,R))`, `N′` is the packing number at separation `c₀/2` and
/// `N″` the greedy cover count at radius `ε₀μ`. The pipeline takes the
/// maxima over balls (and `μ = max μ`). Balls on which `ψ` is constant
/// (see [`constant_floor`]) are ignored.
pub fn measure_constants(
    m: &GammaMetric,
    psi: &VectorField,
    balls: &[Ball],
    k: f64,
) -> Result<MeasuredConstants> {
    let n = 2;
    let sn = (n as f64).sqrt();
    let floor = constant_floor(m, psi);
    let clouds: Vec<(Ball, PointCloud, f64)> = balls
        .par_iter()
        .map(|b| {
            let cloud = psi.restrict(b.y, b.r)?;
            let mu = m.diam(&cloud)?.value / 2.0;
            Ok((*b, cloud, mu))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, _, mu)| 2.0 * *mu > floor)
        .collect();
    if clouds.is_empty() {
        return input("ψ is constant on every sampled ball; μ is undefined");
    }
    let packings: Vec<usize> = clouds
        .par_iter()
        .map(|(_, c, mu)| m.packing_number(c, mu / (64.0 * sn)))
        .collect::<Result<_>>()?;
    let nprime = packings.iter().copied().max().unwrap_or(1);
    let mu = clouds.iter().map(|c| c.2).fold(0.0, f64::max);
    let eps0 = constants(n, mu, k, nprime, 1)?.eps0;
    let covers: Vec<usize> = clouds
        .par_iter()
        .map(|(_, c, mu)| m.greedy_cover(c, eps0 * mu).map(|cv| cv.len()))
        .collect::<Result<_>>()?;
    let ndprime = covers.iter().copied().max().unwrap_or(1);
    let constants = constants(n, mu, k, nprime, ndprime)?;
    let balls = clouds
        .iter()
        .zip(packings.iter().zip(&covers))
        .map(|((b, _, mu), (&packing, &cover))| BallMeasurement {
            y: b.y,
            r: b.r,
            mu: *mu,
            packing,
            cover,
        })
        .collect();
    Ok(MeasuredConstants { constants, balls })
}

/// Outcome of [`ball_elimination_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationProbe {
    pub y: Point,
    pub r: f64,
    pub diam: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub pass: bool,
    /// Why the preconditions failed; the counts are then meaningless.
    pub skipped: Option<String>,
}

/// Covers `ψ(B(y,R))` greedily with balls of radius `εμ` (`μ = diam/2`) and
/// counts how many of those same balls a greedy set cover needs for
/// `ψ(B(y,δR))`. Passes when one ball can be dropped.
pub fn ball_elimination_probe(
    m: &GammaMetric,
    psi: &VectorField,
    y: Point,
    r: f64,
    eps: f64,
    delta: f64,
) -> Result<EliminationProbe> {
    if !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return input(format!(
            "need eps > 0 and delta in (0, 1), got {eps}, {delta}"
        ));
    }
    let g = psi.grid();
    let outer_nodes = g.ball_nodes(y, r)?;
    let outer = psi.image(&outer_nodes);
    let diam = m.diam(&outer)?.value;
    let mut probe = EliminationProbe {
        y,
        r,
        diam,
        n_outer: 0,
        n_inner: 0,
        pass: false,
        skipped: None,
    };
    let mu = diam / 2.0;
    if !(diam > constant_floor(m, psi)) {
        probe.skipped = Some("ψ is constant on the ball".into());
        return Ok(probe);
    }
    if diam < r {
        probe.skipped = Some(format!("2μ = {diam} < R = {r}"));
        return Ok(probe);
    }
    let cover = m.greedy_cover(&outer, eps * mu)?;
    probe.n_outer = cover.len();
    if probe.n_outer < 2 {
        probe.skipped = Some("outer cover has a single ball".into());
        return Ok(probe);
    }
    let inner_nodes = match g.ball_nodes(y, delta * r) {
        Ok(v) => v,
        Err(_) => {
            probe.skipped = Some(format!("B(y, δR) with δR = {} holds no node", delta * r));
            return Ok(probe);
        }
    };
    let inner = psi.image(&inner_nodes);
    let centers: Vec<&[f64]> = cover.centers.iter().map(|&c| outer.point(c)).collect();
    probe.n_inner = greedy_set_cover(m, &inner, &centers, eps * mu);
    probe.pass = probe.n_inner + 1 <= probe.n_outer;
    Ok(probe)
}

/// Number of balls from the fixed list `centers` picked by greedy set
/// cover to cover `cloud`.
fn greedy_set_cover(m: &GammaMetric, cloud: &PointCloud, centers: &[&[f64]], radius: f64) -> usize {
    let sets: Vec<Vec<usize>> = centers
        .iter()
        .map(|c| {
            (0..cloud.len())
                .filter(|&i| m.dist_raw(c, cloud.point(i)) <= radius)
                .collect()
        })
        .collect();
    let mut covered = vec![false; cloud.len()];
    let mut left = cloud.len();
    let mut used = 0;
    while left > 0 {
        let (best, gain) = sets
            .iter()
            .enumerate()
            .map(|(s, set)| (s, set.iter().filter(|&&i| !covered[i]).count()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("at least one center");
        if gain == 0 {
            // Not coverable by the list; count each stray point as a ball.
            return used + left;
        }
        for &i in &sets[best] {
            if !covered[i] {
                covered[i] = true;
                left -= 1;
            }
        }
        used += 1;
    }
    used
}

/// Largest `dist_γ(ψ(a), ψ(b))/|a − b|` over grid edges.
pub fn lipschitz_estimate(m: &GammaMetric, psi: &VectorField) -> f64 {
    let g = psi.grid();
    let (hx, hy) = (g.hx(), g.hy());
    (0..g.ny())
        .into_par_iter()
        .map(|j| {
            let mut best: f64 = 0.0;
            for i in 0..g.nx() {
                let p = psi.value(g.index(i, j));
                if i + 1 < g.nx() {
                    best = best.max(m.dist_raw(&p, &psi.value(g.index(i + 1, j))) / hx);
                }
                if j + 1 < g.ny() {
                    best = best.max(m.dist_raw(&p, &psi.value(g.index(i, j + 1))) / hy);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Outcome of [`halving_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Halving {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

/// `diam ψ(B(y,δ₀R)) ≤ ½·max{diam ψ(B(y,R)), 2R} + 2h·lip`, where `lip` is
/// a Lipschitz estimate of `ψ` into `dist_γ` (see [`lipschitz_estimate`]).
pub fn halving_check(
    m: &GammaMetric,
    psi: &VectorField,
    y: Point,
    r: f64,
    delta0: f64,
    lip: f64,
) -> Result<Halving> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return input(format!("delta0 must lie in (0, 1), got {delta0}"));
    }
    let outer = m.diam(&psi.restrict(y, r)?)?.value;
    let lhs = m.diam(&psi.restrict(y, delta0 * r)?)?.value;
    let rhs = 0.5 * outer.max(2.0 * r);
    let slack = 2.0 * psi.grid().h() * lip;
    Ok(Halving {
        lhs,
        rhs,
        slack,
        pass: lhs <= rhs + slack,
    })
}

/// Fraction of balls passing [`halving_check`].
pub fn halving_pass_rate(
    m: &GammaMetric,
    psi: &VectorField,
    balls: &[Ball],
    delta0: f64,
    lip: f64,
) -> Result<f64> {
    if balls.is_empty() {
        return input("no balls to check");
    }
    let passes: Vec<bool> = balls
        .par_iter()
        .map(|b| halving_check(m, psi, b.y, b.r, delta0, lip).map(|h| h.pass))
        .collect::<Result<_>>()?;
    Ok(passes.iter().filter(|&&p| p).count() as f64 / balls.len() as f64)
}

/// Required halving pass rate for the empirical `δ₀`.
pub const HALVING_RATE: f64 = 0.95;

/// Bisection steps for the empirical `δ₀`.
pub const BISECTION_STEPS: usize = 8;

/// Empirical `δ₀` and its pass rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalDelta0 {
    pub delta0: f64,
    pub pass_rate: f64,
}

/// Largest radius fraction in `(0, 1/2)` reaching [`HALVING_RATE`], by
/// bisection over [`BISECTION_STEPS`] steps. Fractions below `2^{-9}` that
/// still fail are reported as an error.
pub fn empirical_delta0(
    m: &GammaMetric,
    psi: &VectorField,
    balls: &[Ball],
    lip: f64,
) -> Result<EmpiricalDelta0> {
    let (mut lo, mut hi) = (0.0, 0.5);
    let mut best_rate = f64::NAN;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let rate = halving_pass_rate(m, psi, balls, mid, lip)?;
        if rate >= HALVING_RATE {
            lo = mid;
            best_rate = rate;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return input(format!(
            "halving fails on more than 5% of balls at every fraction ≥ {hi}"
        ));
    }
    Ok(EmpiricalDelta0 {
        delta0: lo,
        pass_rate: best_rate,
    })
}

/// The bound `max_l osc ψ^l ≤ diam/(2nM)` implied by `γ* = 4nM`.
pub fn component_osc(pkg: &PsiPackage, cloud_diam: f64) -> Result<f64> {
    if !(cloud_diam >= 0.0) {
        return input(format!(
            "cloud diameter must be nonnegative, got {cloud_diam}"
        ));
    }
    Ok(cloud_diam / (2.0 * crate::subsolution::DIM as f64 * pkg.m))
}

/// Per-component oscillation of a planar cloud.
pub fn cloud_osc(cloud: &PointCloud) -> [f64; 2] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in cloud.points() {
        for l in 0..2 {
            lo[l] = lo[l].min(p[l]);
            hi[l] = hi[l].max(p[l]);
        }
    }
    [hi[0] - lo[0], hi[1] - lo[1]]
}

/// Minimal node count for a decay step to be recorded.
pub const MIN_DECAY_NODES: usize = 9;

/// Constant of the chained decay bound
/// `diam ≤ (16nM² + 4M² + 4·diam Ω)·(R/d)^α`.
pub fn decay_bound_constant(m_sup: f64, diam_omega: f64) -> f64 {
    let n = crate::subsolution::DIM as f64;
    16.0 * n * m_sup * m_sup + 4.0 * m_sup * m_sup + 4.0 * diam_omega
}

/// Diameters of `ψ(B(y, δ₀^m d))` along the dyadic-type iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTrace {
    pub y: Point,
    pub d: f64,
    pub delta0: f64,
    pub radii: Vec<f64>,
    /// Largest node distance from `y` inside each ball.
    pub effective_radii: Vec<f64>,
    pub diams: Vec<f64>,
    pub osc_components: Vec<[f64; 2]>,
    pub nodes: Vec<usize>,
    /// Least-squares slope of `log max{diam, 2r}` against `log r`, with `r`
    /// the effective radius of the discrete ball.
    pub alpha_emp: f64,
    pub alpha_theory: f64,
    pub bound: Vec<f64>,
    pub bound_ok: Vec<bool>,
    /// Step `m ≥ 1` halves relative to step `m − 1` (up to the slack);
    /// `true` at `m = 0`.
    pub halving_pass: Vec<bool>,
    /// Stopped before `m_max` because a ball held too few nodes.
    pub truncated: bool,
}

/// Parameters of [`decay_trace`] that come from the surrounding run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySetup {
    pub delta0: f64,
    pub m_max: usize,
    pub alpha_theory: f64,
    /// `M = max{sup|ψ|, 1}`.
    pub m_sup: f64,
    pub diam_omega: f64,
    pub lip: f64,
}

/// Records `diam_γ(ψ(B(y, δ₀^m d)))` for `m = 0..=m_max`, stopping when a
/// ball holds fewer than [`MIN_DECAY_NODES`] nodes.
pub fn decay_trace(
    m: &GammaMetric,
    psi: &VectorField,
    y: Point,
    d: f64,
    setup: &DecaySetup,
) -> Result<DecayTrace> {
    if !(setup.delta0 > 0.0 && setup.delta0 < 0.5) {
        return input(format!("delta0 must lie in (0, 1/2), got {}", setup.delta0));
    }
    let g = psi.grid();
    if g.distance_to_boundary(y) < d * (1.0 - 1e-12) {
        return input(format!("B({y:?}, {d}) is not inside the domain"));
    }
    let c = decay_bound_constant(setup.m_sup, setup.diam_omega);
    let slack = 2.0 * g.h() * setup.lip;
    let mut t = DecayTrace {
        y,
        d,
        delta0: setup.delta0,
        radii: vec![],
        effective_radii: vec![],
        diams: vec![],
        osc_components: vec![],
        nodes: vec![],
        alpha_emp: f64::NAN,
        alpha_theory: setup.alpha_theory,
        bound: vec![],
        bound_ok: vec![],
        halving_pass: vec![],
        truncated: false,
    };
    let mut r = d;
    for step in 0..=setup.m_max {
        let nodes = match g.ball_nodes(y, r) {
            Ok(v) if v.len() >= MIN_DECAY_NODES => v,
            _ => {
                t.truncated = true;
                break;
            }
        };
        let cloud = psi.image(&nodes);
        let diam = m.diam(&cloud)?.value;
        let bound = c * (r / d).powf(setup.alpha_theory);
        let halves = match step {
            0 => true,
            _ => {
                let prev = step - 1;
                diam <= 0.5 * t.diams[prev].max(2.0 * t.radii[prev]) + slack
            }
        };
        let r_eff = nodes
            .iter()
            .map(|&k| {
                let p = g.node_at(k);
                (p[0] - y[0]).hypot(p[1] - y[1])
            })
            .fold(0.0, f64::max);
        t.radii.push(r);
        t.effective_radii.push(r_eff);
        t.diams.push(diam);
        t.osc_components.push(cloud_osc(&cloud));
        t.nodes.push(nodes.len());
        t.bound.push(bound);
        t.bound_ok.push(diam <= bound);
        t.halving_pass.push(halves);
        r *= setup.delta0;
    }
    if t.radii.len() < 2 {
        return input(format!(
            "decay trace from B({y:?}, {d}) has fewer than two usable radii"
        ));
    }
    let xs: Vec<f64> = t.effective_radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = t
        .effective_radii
        .iter()
        .zip(&t.diams)
        .map(|(r, dm)| dm.max(2.0 * r).ln())
        .collect();
    t.alpha_emp = ls_slope(&xs, &ys);
    Ok(t)
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// One row of the covering CSV contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverRow {
    pub y: Point,
    pub r: f64,
    pub diam: f64,
    pub osc: [f64; 2],
    pub pass: bool,
}

pub const COVER_CSV_HEADER: &str = "y1,y2,r,diam,osc1,osc2,pass";

pub fn rows_to_csv(rows: &[CoverRow]) -> String {
    let mut s = String::from(COVER_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.y[0], r.y[1], r.r, r.diam, r.osc[0], r.osc[1], r.pass
        ));
    }
    s
}

impl DecayTrace {
    /// Rows with `pass = bound_ok && halving_pass`.
    pub fn rows(&self) -> Vec<CoverRow> {
        (0..self.radii.len())
            .map(|i| CoverRow {
                y: self.y,
                r: self.radii[i],
                diam: self.diams[i],
                osc: self.osc_components[i],
                pass: self.bound_ok[i] && self.halving_pass[i],
            })
            .collect()
    }
}

/// Nodes of `Ω_d = {x : dist(x, ∂Ω) ≥ d}`.
pub fn interior_region(g: &Grid2D, d: f64) -> Vec<usize> {
    (0..g.len())
        .filter(|&k| g.distance_to_boundary(g.node_at(k)) >= d - 1e-12)
        .collect()
}

/// Outcome of [`holder_seminorm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub value: f64,
    pub pairs: usize,
    /// Pairs were sampled, so `value` is a lower bound.
    pub sampled: bool,
}

/// `sup |ψ(x) − ψ(y)|/|x − y|^α` over node pairs of `region`. All pairs are
/// used when there are at most `pair_budget`; otherwise an equal share of
/// the budget goes to each dyadic band of pair distances, drawn with a
/// seeded generator.
pub fn holder_seminorm(
    psi: &VectorField,
    region: &[usize],
    alpha: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    if region.is_empty() {
        return input("empty region");
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return input(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    let g = psi.grid();
    let quotient = |a: usize, b: usize| {
        let (pa, pb) = (g.node_at(a), g.node_at(b));
        let (va, vb) = (psi.value(a), psi.value(b));
        let num = (va[0] - vb[0]).hypot(va[1] - vb[1]);
        num / (pa[0] - pb[0]).hypot(pa[1] - pb[1]).powf(alpha)
    };
    let n = region.len();
    let total = n * (n - 1) / 2;
    if total <= pair_budget {
        let value = (0..n)
            .into_par_iter()
            .map(|i| {
                region[i + 1..]
                    .iter()
                    .map(|&b| quotient(region[i], b))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        return Ok(HolderEstimate {
            value,
            pairs: total,
            sampled: false,
        });
    }
    let mut member = vec![false; g.len()];
    for &k in region {
        member[k] = true;
    }
    let h = g.hx().min(g.hy());
    let bands = ((g.diameter() / h).log2().ceil() as usize).max(1);
    let per_band = (pair_budget / bands).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut value: f64 = 0.0;
    let mut pairs = 0;
    for b in 0..bands {
        let mut got = 0;
        let mut attempts = 0;
        while got < per_band && attempts < 4 * per_band {
            attempts += 1;
            let a = region[rng.gen_range(0..n)];
            let rho = h * 2f64.powf(b as f64 + rng.gen::<f64>());
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let pa = g.node_at(a);
            let target = [pa[0] + rho * theta.cos(), pa[1] + rho * theta.sin()];
            if g.distance_to_boundary(target) < -0.5 * h {
                continue;
            }
            let (i, j) = g.nearest_node(target);
            let bk = g.index(i, j);
            if bk == a || !member[bk] {
                continue;
            }
            value = value.max(quotient(a, bk));
            got += 1;
        }
        pairs += got;
    }
    Ok(HolderEstimate {
        value,
        pairs,
        sampled: true,
    })
}

/// `[ψ]_{α;Ω_d}·d^α` for one `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub d: f64,
    pub nodes: usize,
    pub seminorm: f64,
    pub product: f64,
    pub sampled: bool,
    /// The seminorm is at round-off level; `product` is then 0.
    pub roundoff: bool,
}

/// Seminorms at or below `ROUNDOFF_REL·M/h^α` (round-off of `ψ` seen by a
/// single node pair) are recorded with a zero product.
pub fn d_scaling_probe(
    psi: &VectorField,
    alpha: f64,
    d_values: &[f64],
    pair_budget: usize,
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    let floor = ROUNDOFF_REL * psi.sup_norm().max(1.0) / psi.grid().h().powf(alpha);
    d_values
        .iter()
        .map(|&d| {
            if !(d > 0.0) {
                return input(format!("d must be positive, got {d}"));
            }
            let region = interior_region(psi.grid(), d);
            if region.is_empty() {
                return input(format!("Ω_d is empty on the grid for d = {d}"));
            }
            let est = holder_seminorm(psi, &region, alpha, pair_budget, seed)?;
            let roundoff = est.value <= floor;
            Ok(ScalingRow {
                d,
                nodes: region.len(),
                seminorm: est.value,
                product: if roundoff {
                    0.0
                } else {
                    est.value * d.powf(alpha)
                },
                sampled: est.sampled,
                roundoff,
            })
        })
        .collect()
}

/// `max/min` of the products; 1 when all vanish, `∞` when only some do.
pub fn scaling_ratio(rows: &[ScalingRow]) -> f64 {
    let max = rows.iter().map(|r| r.product).fold(0.0, f64::max);
    let min = rows.iter().map(|r| r.product).fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::analytic_holder_field;

    fn identity(n: usize) -> VectorField {
        let g = Grid2D::new(n, n, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        VectorField::from_fn(g, |x| x)
    }

    #[test]
    fn unit_ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn constants_examples() {
        let c = constants(2, 64.0 * 2f64.sqrt(), 3.0, 10, 4).unwrap();
        assert!((c.c0 - 2.0).abs() < 1e-12);
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        let pi = std::f64::consts::PI;
        let sn = 2f64.sqrt();
        let eps = (0.2 * 2f64.powi(-4) * pi / (sn * 3.0 * 10.0)).min(1.0 / (128.0 * sn));
        assert!((c.eps0 - eps).abs() < 1e-15);
        let delta = 2.0 * pi / (64.0 * sn * 10.0 * 3.0);
        assert!((c.delta - delta).abs() < 1e-15);
        assert!((c.delta0 - delta.powi(3)).abs() < 1e-15);
        assert!((alpha_from_delta0(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!(alpha_from_delta0(0.5 - 1e-12).unwrap() > 0.999_999);
        assert!(alpha_from_delta0(0.5).is_err());
    }

    #[test]
    fn degenerate_and_extreme_constants() {
        let c = constants(2, 1.0, 0.0, 5, 1).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.delta, 0.499);
        assert!(c.violations().is_empty());
        let tiny = constants(2, 1.0, 1e3, 1000, 100_000).unwrap();
        assert_eq!(tiny.delta0, 0.0);
        assert!(tiny.alpha > 0.0 && tiny.violations().is_empty());
        assert!(constants(2, 0.0, 1.0, 1, 1).is_err());
        assert!(constants(2, 1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn elimination_probe_on_identity() {
        let psi = identity(65);
        let m = GammaMetric::new(8.0).unwrap();
        let p = ball_elimination_probe(&m, &psi, [0.0, 0.0], 0.5, 0.1, 0.25).unwrap();
        assert!(p.skipped.is_none());
        assert!(p.pass && p.n_inner < p.n_outer, "{p:?}");
    }

    #[test]
    fn elimination_inner_constant_needs_one_ball() {
        let g = Grid2D::unit_square(33).unwrap();
        let psi = VectorField::from_fn(g, |x| {
            let r = (x[0] - 0.5).hypot(x[1] - 0.5);
            let s = (r - 0.1).max(0.0);
            [s, 0.0]
        });
        let m = GammaMetric::new(2.0).unwrap();
        let p = ball_elimination_probe(&m, &psi, [0.5, 0.5], 0.4, 0.05, 0.2).unwrap();
        assert!(p.skipped.is_none(), "{p:?}");
        assert_eq!(p.n_inner, 1);
        assert!(p.pass);
    }

    #[test]
    fn halving_examples() {
        let m = GammaMetric::new(8.0).unwrap();
        let g = Grid2D::unit_square(65).unwrap();
        let constant = VectorField::from_fn(g, |_| [1.0, 2.0]);
        let h = halving_check(&m, &constant, [0.5, 0.5], 0.3, 0.25, 0.0).unwrap();
        assert_eq!(h.lhs, 0.0);
        assert!(h.pass);
        let id = VectorField::from_fn(g, |x| x);
        let lip = lipschitz_estimate(&m, &id);
        let h = halving_check(&m, &id, [0.5, 0.5], 0.4, 0.1, lip).unwrap();
        // Inner image: disc of radius < 0.04 about (0.5, 0.5), so its
        // diameter is below 2(8 + 2·0.54)·0.04.
        assert!(h.lhs < 2.0 * (8.0 + 2.0 * 0.54) * 0.04);
        assert!(
            (h.rhs
                - 0.5
                    * m.diam(&id.restrict([0.5, 0.5], 0.4).unwrap())
                        .unwrap()
                        .value
                        .max(0.8))
            .abs()
                < 1e-15
        );
        assert!(h.pass);
    }

    #[test]
    fn decay_of_constant_field_follows_the_floor() {
        let g = Grid2D::unit_square(129).unwrap();
        let psi = VectorField::from_fn(g, |_| [0.3, 0.3]);
        let m = GammaMetric::new(8.0).unwrap();
        let setup = DecaySetup {
            delta0: 0.25,
            m_max: 10,
            alpha_theory: 0.5,
            m_sup: 1.0,
            diam_omega: g.diameter(),
            lip: 0.0,
        };
        let t = decay_trace(&m, &psi, [0.5, 0.5], 0.45, &setup).unwrap();
        assert!(t.diams.iter().all(|&d| d == 0.0));
        assert!((t.alpha_emp - 1.0).abs() < 1e-12);
        assert!(t.truncated);
        assert!(t.radii.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn decay_recovers_holder_exponent() {
        let g = Grid2D::new(129, 129, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let psi = analytic_holder_field(0.5, g).unwrap();
        let pkg = PsiPackage::from_psi(psi.clone());
        let m = GammaMetric::new(pkg.gamma_star).unwrap();
        let setup = DecaySetup {
            delta0: 0.25,
            m_max: 10,
            alpha_theory: 0.5,
            m_sup: pkg.m,
            diam_omega: g.diameter(),
            lip: lipschitz_estimate(&m, &psi),
        };
        let t = decay_trace(&m, &psi, [0.0, 0.0], 0.9, &setup).unwrap();
        assert!((0.4..=0.6).contains(&t.alpha_emp), "{}", t.alpha_emp);
        assert!(t.bound_ok.iter().all(|&b| b));
    }

    #[test]
    fn component_osc_examples() {
        let g = Grid2D::unit_square(9).unwrap();
        let pkg = PsiPackage::from_psi(VectorField::from_fn(g, |_| [0.5, 0.0]));
        assert_eq!(pkg.m, 1.0);
        assert_eq!(component_osc(&pkg, 0.0).unwrap(), 0.0);
        assert_eq!(component_osc(&pkg, 8.0).unwrap(), 2.0);
    }

    #[test]
    fn component_osc_bounds_identity_oscillations() {
        let psi = identity(65);
        let pkg = PsiPackage::from_psi(psi.clone());
        let m = GammaMetric::new(pkg.gamma_star).unwrap();
        for &(y, r) in &[([0.0, 0.0], 0.5), ([0.3, -0.2], 0.3), ([-0.5, 0.5], 0.45)] {
            let cloud = psi.restrict(y, r).unwrap();
            let bound = component_osc(&pkg, m.diam(&cloud).unwrap().value).unwrap();
            let osc = cloud_osc(&cloud);
            assert!(osc[0] <= bound && osc[1] <= bound);
        }
    }

    #[test]
    fn holder_seminorm_examples() {
        let g = Grid2D::unit_square(17).unwrap();
        let all: Vec<usize> = (0..g.len()).collect();
        let c = VectorField::from_fn(g, |_| [1.0, -1.0]);
        assert_eq!(
            holder_seminorm(&c, &all, 0.5, 1 << 20, 0).unwrap().value,
            0.0
        );
        let id = VectorField::from_fn(g, |x| x);
        let e = holder_seminorm(&id, &all, 1.0, 1 << 20, 0).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12 && !e.sampled);
        assert!(holder_seminorm(&id, &[], 1.0, 10, 0).is_err());
    }

    #[test]
    fn holder_seminorm_refinement_behaviour() {
        let est = |n: usize, alpha: f64| {
            let g = Grid2D::new(n, n, [-1.0, 1.0, -1.0, 1.0]).unwrap();
            let psi = analytic_holder_field(0.5, g).unwrap();
            let all: Vec<usize> = (0..g.len()).collect();
            holder_seminorm(&psi, &all, alpha, usize::MAX, 0)
                .unwrap()
                .value
        };
        let (a, b) = (est(33, 0.5), est(65, 0.5));
        assert!((b / a - 1.0).abs() < 0.05, "{a} {b}");
        let (a, b) = (est(33, 0.7), est(65, 0.7));
        // grows like h^{-0.2}: ratio 2^{0.2} ≈ 1.149
        assert!((b / a - 2f64.powf(0.2)).abs() < 0.03, "{}", b / a);
    }

    #[test]
    fn sampled_seminorm_is_a_lower_bound() {
        let g = Grid2D::unit_square(65).unwrap();
        let psi = VectorField::from_fn(g, |x| [x[0].sin(), (3.0 * x[1]).cos()]);
        let all: Vec<usize> = (0..g.len()).collect();
        let exact = holder_seminorm(&psi, &all, 0.8, usize::MAX, 0).unwrap();
        let s = holder_seminorm(&psi, &all, 0.8, 20_000, 3).unwrap();
        assert!(s.sampled && !exact.sampled);
        assert!(s.value <= exact.value * (1.0 + 1e-12));
        assert!(
            s.value >= 0.9 * exact.value,
            "{} vs {}",
            s.value,
            exact.value
        );
        assert_eq!(s, holder_seminorm(&psi, &all, 0.8, 20_000, 3).unwrap());
    }

    #[test]
    fn scaling_probe_on_constant_and_identity() {
        let g = Grid2D::unit_square(33).unwrap();
        let c = VectorField::from_fn(g, |_| [2.0, 2.0]);
        let rows = d_scaling_probe(&c, 0.9, &[0.05, 0.1, 0.2, 0.4], 1 << 22, 0).unwrap();
        assert!(rows.iter().all(|r| r.product == 0.0));
        assert_eq!(scaling_ratio(&rows), 1.0);
        let id = VectorField::from_fn(g, |x| x);
        let rows = d_scaling_probe(&id, 0.9, &[0.05, 0.1, 0.2, 0.4], 1 << 22, 0).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.seminorm.is_finite() && r.seminorm > 0.0));
        assert!(d_scaling_probe(&id, 0.9, &[0.6], 1 << 22, 0).is_err());
    }

    #[test]
    fn round_off_noise_counts_as_constant() {
        let g = Grid2D::unit_square(33).unwrap();
        let noisy = VectorField::from_fn(g, |x| {
            let wobble = 1e-12 * (37.0 * x[0] + 11.0 * x[1]).sin();
            [2.0 + wobble, -1.0 - wobble]
        });
        let rows = d_scaling_probe(&noisy, 0.9, &[0.05, 0.1, 0.2, 0.4], 1 << 22, 0).unwrap();
        assert!(rows.iter().all(|r| r.roundoff && r.seminorm > 0.0));
        assert_eq!(scaling_ratio(&rows), 1.0);
        let pkg = PsiPackage::from_psi(noisy.clone());
        let m = GammaMetric::new(pkg.gamma_star).unwrap();
        let balls = [Ball {
            y: [0.5, 0.5],
            r: 0.3,
        }];
        assert!(measure_constants(&m, &noisy, &balls, 1.0).is_err());
        let p = ball_elimination_probe(&m, &noisy, [0.5, 0.5], 0.3, 0.1, 0.25).unwrap();
        assert_eq!(p.skipped.as_deref(), Some("ψ is constant on the ball"));
    }

    #[test]
    fn measured_constants_satisfy_invariants() {
        let psi = identity(33);
        let pkg = PsiPackage::from_psi(psi.clone());
        let m = GammaMetric::new(pkg.gamma_star).unwrap();
        let balls = [
            Ball {
                y: [0.0, 0.0],
                r: 0.5,
            },
            Ball {
                y: [0.25, 0.25],
                r: 0.3,
            },
        ];
        let mc = measure_constants(&m, &psi, &balls, 20.0).unwrap();
        assert_eq!(mc.balls.len(), 2);
        assert!(mc.constants.violations().is_empty());
        assert!(mc.constants.nprime >= 2 && mc.constants.ndprime >= 2);
    }
}
