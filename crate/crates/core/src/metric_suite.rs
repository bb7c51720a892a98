//! Randomized property sweep for [`GammaMetric`]: metric axioms, the
//! Euclidean sandwich and the closed form against a brute-force supremum
//! over sampled unit directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::gamma_metric::GammaMetric;

/// Weights exercised by the sweep.
pub const GAMMAS: [f64; 5] = [0.5, -0.5, 2.0, -2.0, 8.0];

/// Sizes and tolerances of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteSize {
    pub triples: usize,
    pub pairs: usize,
    pub oracle_pairs: usize,
    pub directions: usize,
    /// Points are drawn uniformly from `B(0, radius)`.
    pub radius: f64,
    pub oracle_rel_tol: f64,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self {
            triples: 100_000,
            pairs: 10_000,
            oracle_pairs: 1_000,
            directions: 8192,
            radius: 5.0,
            oracle_rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteReport {
    pub triples: usize,
    pub axiom_failures: usize,
    pub pairs: usize,
    pub sandwich_failures: usize,
    pub oracle_pairs: usize,
    pub oracle_failures: usize,
    pub oracle_max_rel_err: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.axiom_failures == 0 && self.sandwich_failures == 0 && self.oracle_failures == 0
    }
}

fn disc_point(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    [r * t.cos(), r * t.sin()]
}

/// `sup_e |γ(x₁ − x₂)·e + |x₁|² − |x₂|²|` over `dirs` equally spaced unit
/// directions with a random phase.
pub fn directional_sup(gamma: f64, x1: [f64; 2], x2: [f64; 2], dirs: usize, phase: f64) -> f64 {
    let a = [gamma * (x1[0] - x2[0]), gamma * (x1[1] - x2[1])];
    let b = x1[0] * x1[0] + x1[1] * x1[1] - x2[0] * x2[0] - x2[1] * x2[1];
    (0..dirs)
        .map(|k| {
            let t = phase + std::f64::consts::TAU * k as f64 / dirs as f64;
            (a[0] * t.cos() + a[1] * t.sin() + b).abs()
        })
        .fold(0.0, f64::max)
}

/// Runs the sweep with a seeded generator; chunks are seeded independently
/// so the result does not depend on the thread count.
pub fn run_suite(seed: u64, size: &SuiteSize) -> Result<SuiteReport> {
    let metrics: Vec<GammaMetric> = GAMMAS
        .iter()
        .map(|&g| GammaMetric::new(g))
        .collect::<Result<_>>()?;
    const CHUNK: usize = 4096;

    let chunks = size.triples.div_ceil(CHUNK);
    let axiom_failures: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(size.triples - c * CHUNK);
            let mut bad = 0;
            for t in 0..n {
                let m = &metrics[(c * CHUNK + t) % metrics.len()];
                let x = disc_point(&mut rng, size.radius);
                let y = disc_point(&mut rng, size.radius);
                let z = disc_point(&mut rng, size.radius);
                let (dxy, dyx, dxz, dyz) = (
                    m.dist_raw(&x, &y),
                    m.dist_raw(&y, &x),
                    m.dist_raw(&x, &z),
                    m.dist_raw(&y, &z),
                );
                let ok = m.dist_raw(&x, &x) == 0.0
                    && dxy == dyx
                    && (x == y || dxy > 0.0)
                    && dxz <= dxy + dyz + 1e-12 * (1.0 + dxz);
                if !ok {
                    bad += 1;
                }
            }
            bad
        })
        .sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut sandwich_failures = 0;
    for p in 0..size.pairs {
        let m = &metrics[p % metrics.len()];
        let x = disc_point(&mut rng, size.radius);
        let y = disc_point(&mut rng, size.radius);
        let d = m.dist(&x, &y)?;
        let (lo, hi) = m.bounds(&x, &y)?;
        if !(lo <= d * (1.0 + 1e-12) && d <= hi * (1.0 + 1e-12)) {
            sandwich_failures += 1;
        }
    }

    let mut cases = Vec::with_capacity(size.oracle_pairs);
    for p in 0..size.oracle_pairs {
        let g = GAMMAS[p % GAMMAS.len()];
        let x = disc_point(&mut rng, size.radius);
        let y = disc_point(&mut rng, size.radius);
        cases.push((g, x, y, rng.gen_range(0.0..std::f64::consts::TAU)));
    }
    let errors: Vec<f64> = cases
        .par_iter()
        .map(|&(g, x, y, phase)| {
            let closed = GammaMetric::new(g)
                .map(|m| m.dist_raw(&x, &y))
                .unwrap_or(f64::NAN);
            let oracle = directional_sup(g, x, y, size.directions, phase);
            if closed == 0.0 {
                oracle.abs()
            } else {
                (closed - oracle).abs() / closed
            }
        })
        .collect();
    let oracle_failures = errors
        .iter()
        .filter(|&&e| !(e <= size.oracle_rel_tol))
        .count();
    let oracle_max_rel_err = errors.iter().copied().fold(0.0, f64::max);

    Ok(SuiteReport {
        triples: size.triples,
        axiom_failures,
        pairs: size.pairs,
        sandwich_failures,
        oracle_pairs: size.oracle_pairs,
        oracle_failures,
        oracle_max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_reproducible() {
        let size = SuiteSize {
            triples: 5000,
            pairs: 500,
            oracle_pairs: 50,
            ..SuiteSize::default()
        };
        let a = run_suite(1, &size).unwrap();
        assert!(a.pass(), "{a:?}");
        assert!(a.oracle_max_rel_err < 1e-6);
        assert_eq!(a, run_suite(1, &size).unwrap());
    }

    #[test]
    fn too_few_directions_are_caught() {
        let size = SuiteSize {
            triples: 10,
            pairs: 10,
            oracle_pairs: 200,
            directions: 3,
            ..SuiteSize::default()
        };
        assert!(run_suite(2, &size).unwrap().oracle_failures > 0);
    }
}
