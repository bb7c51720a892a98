//! wasm-bindgen bindings used by `www/index.html`.

use holderlab::covering::{
    alpha_from_delta0, decay_trace, empirical_delta0, lipschitz_estimate, DecaySetup,
};
use holderlab::equation::EquationSpec;
use holderlab::expr::Expr;
use holderlab::field::{analytic_holder_field, Grid2D};
use holderlab::gamma_metric::GammaMetric;
use holderlab::sampler::BallSampler;
use holderlab::solver::{newton_solve, SolverOptions};
use holderlab::subsolution::PsiPackage;
use holderlab::LabError;
use wasm_bindgen::prelude::*;

fn js(e: LabError) -> JsError {
    JsError::new(&e.to_string())
}

/// `dist_γ(c, x)` on a `size × size` raster of `[-extent, extent]²`, row
/// by row from the top.
#[wasm_bindgen]
pub fn metric_raster(
    gamma: f64,
    cx: f64,
    cy: f64,
    extent: f64,
    size: usize,
) -> Result<Vec<f64>, JsError> {
    let m = GammaMetric::new(gamma).map_err(js)?;
    if size < 2 || !(extent > 0.0) {
        return Err(JsError::new("need size ≥ 2 and a positive extent"));
    }
    let step = 2.0 * extent / (size - 1) as f64;
    let c = [cx, cy];
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = extent - row as f64 * step;
        for col in 0..size {
            let x = -extent + col as f64 * step;
            out.push(m.dist(&c, &[x, y]).map_err(js)?);
        }
    }
    Ok(out)
}

/// Decay trace of `ψ = |x|^{β−1}x` from the origin on an `n × n` grid of
/// `[-1, 1]²`. Returns `[alpha_emp, δ₀, r₀, diam₀, r₁, diam₁, …]`.
#[wasm_bindgen]
pub fn decay_alpha(beta: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let g = Grid2D::new(n, n, [-1.0, 1.0, -1.0, 1.0]).map_err(js)?;
    let psi = analytic_holder_field(beta, g).map_err(js)?;
    let pkg = PsiPackage::from_psi(psi.clone());
    let m = GammaMetric::new(pkg.gamma_star).map_err(js)?;
    let lip = lipschitz_estimate(&m, &psi);
    let balls = BallSampler {
        count: 16,
        seed: 7,
        r_min: 0.2,
        r_max: 0.6,
    }
    .sample(&g)
    .map_err(js)?;
    let delta0 = empirical_delta0(&m, &psi, &balls, lip).map_err(js)?.delta0;
    let setup = DecaySetup {
        delta0,
        m_max: 40,
        alpha_theory: alpha_from_delta0(delta0).map_err(js)?,
        m_sup: pkg.m,
        diam_omega: g.diameter(),
        lip,
    };
    let t = decay_trace(&m, &psi, [0.0, 0.0], 0.9, &setup).map_err(js)?;
    let mut out = vec![t.alpha_emp, delta0];
    for (r, d) in t.effective_radii.iter().zip(&t.diams) {
        out.push(*r);
        out.push(*d);
    }
    Ok(out)
}

/// Solves a registry equation on the unit square with Dirichlet data
/// `boundary(x1, x2)`. Returns `[iterations, residual, u…]` with `u` row
/// by row from `x2 = 0`.
#[wasm_bindgen]
pub fn solve(equation: &str, boundary: &str, n: usize) -> Result<Vec<f64>, JsError> {
    if n > 129 {
        return Err(JsError::new("the demo caps the grid at 129 × 129"));
    }
    let spec = EquationSpec::by_name(equation).map_err(js)?;
    let b = Expr::parse(boundary).map_err(js)?;
    let g = Grid2D::unit_square(n).map_err(js)?;
    let sol = newton_solve(&spec, &|x| b.eval_xy(x), g, &SolverOptions::default()).map_err(js)?;
    let mut out = vec![sol.iterations as f64, sol.residual];
    out.extend_from_slice(sol.u.values());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_is_zero_at_the_center_only() {
        let r = metric_raster(2.0, 0.0, 0.0, 1.0, 5).unwrap();
        assert_eq!(r.len(), 25);
        assert_eq!(r[12], 0.0);
        assert_eq!(r.iter().filter(|&&d| d == 0.0).count(), 1);
    }

    #[test]
    fn decay_alpha_recovers_beta() {
        let out = decay_alpha(0.5, 65).unwrap();
        assert!((out[0] - 0.5).abs() < 0.1, "{}", out[0]);
        assert!(out.len() >= 6 && out.len() % 2 == 0);
    }

    #[test]
    fn solve_returns_the_grid_values() {
        let out = solve("laplace", "x1 + x2", 9).unwrap();
        assert_eq!(out.len(), 2 + 81);
        assert!((out[2 + 80] - 2.0).abs() < 1e-12);
    }
}
