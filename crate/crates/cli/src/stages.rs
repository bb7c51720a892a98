//! Pipeline stages. Each writes its artifacts into the run directory and
//! returns its JSON summary.

use holderlab::covering::{
    alpha_from_delta0, ball_elimination_probe, cloud_osc, component_osc, d_scaling_probe,
    decay_trace, empirical_delta0, lipschitz_estimate, measure_constants, rows_to_csv,
    scaling_ratio, CoverRow, DecaySetup, EliminationProbe, MeasuredConstants,
};
use holderlab::equation::{theta1_probe, EquationSpec};
use holderlab::field::{Grid2D, ScalarField};
use holderlab::gamma_metric::GammaMetric;
use holderlab::harnack::{estimate_k, HarnackReport};
use holderlab::metric_suite::{run_suite, SuiteSize};
use holderlab::sampler::Ball;
use holderlab::solver::{newton_solve, Solution};
use holderlab::subsolution::{
    build_psi, chi, divergence_data, refinement_study, PsiPackage, Sign, DIM,
};
use holderlab::LabError;
use serde_json::{json, Value};

use crate::artifacts::*;
use crate::error::{CliError, Result};

/// Largest admissible spread of `[Du]_{α;Ω_d}·d^α` over the `d` values.
pub const SCALING_RATIO_LIMIT: f64 = 4.0;

/// Cap on the exponent used by the scaling stage.
pub const ALPHA_CAP: f64 = 0.9;

const THETA_SAMPLES: usize = 4096;

fn solve_on(run: &Run, grid: Grid2D) -> Result<Solution> {
    let spec = run.cfg.spec()?;
    let bdry = run.cfg.boundary()?;
    newton_solve(&spec, &|x| bdry.eval_xy(x), grid, &run.cfg.solver).map_err(|e| match e {
        LabError::Structure { .. } => CliError::Solver(e.to_string()),
        other => other.into(),
    })
}

pub fn solve(run: &Run) -> Result<Value> {
    let grid = run.cfg.grid()?;
    run.progress(format!("solving on {}×{}", grid.nx(), grid.ny()));
    let sol = solve_on(run, grid)?;
    let spec = run.cfg.spec()?;
    let rho = sol.u.max_abs().max(sol.u.gradient().sup_norm()).max(1.0);
    let structure = match theta1_probe(&spec, rho, THETA_SAMPLES, grid.domain()) {
        Ok(b) => json!(b),
        Err(e @ LabError::Structure { .. }) => json!({ "error": e.to_string() }),
        Err(e) => return Err(e.into()),
    };
    run.write_text(SOLUTION_CSV, &sol.u.to_csv("u"))?;
    let summary = json!({
        "equation": spec.name,
        "nx": grid.nx(),
        "ny": grid.ny(),
        "domain": grid.domain(),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "history": sol.history,
        "structure": structure,
    });
    run.write_json(SOLVE_JSON, summary.clone())?;
    Ok(summary)
}

pub const SUBSOLUTION_CSV_HEADER: &str = "n,h,k,sign,max_violation,worst_i,worst_j,floor,tol,pass";

/// Nodewise identities of the auxiliary functions; returns the largest
/// identity error and the largest `g`.
fn check_identities(
    spec: &EquationSpec,
    u: &ScalarField,
    pkg: &PsiPackage,
) -> Result<(f64, f64, f64)> {
    if pkg.gamma_star != 4.0 * DIM as f64 * pkg.m {
        return Err(CliError::Invariant(format!(
            "γ* = {} ≠ 4nM",
            pkg.gamma_star
        )));
    }
    let sq = pkg.psi.norm_field();
    let mut id_err: f64 = 0.0;
    let mut g_max = f64::NEG_INFINITY;
    for axis in 0..DIM {
        let vp = pkg.v_field(axis, Sign::Plus)?;
        let vm = pkg.v_field(axis, Sign::Minus)?;
        for k in 0..u.grid().len() {
            let s = sq.values()[k];
            let e = (vp.values()[k] + vm.values()[k] - 2.0 * s * s).abs() / (1.0 + s * s);
            id_err = id_err.max(e);
        }
        for sign in Sign::BOTH {
            let d = divergence_data(spec, u, axis, pkg.gamma_star, sign)?;
            g_max = d.g_base.iter().copied().fold(g_max, f64::max);
        }
    }
    if id_err > 1e-12 {
        return Err(CliError::Invariant(format!(
            "v₊ + v₋ ≠ 2|ψ|² (relative error {id_err:e})"
        )));
    }
    if g_max > 0.0 {
        return Err(CliError::Invariant(format!(
            "g is positive somewhere (max {g_max:e})"
        )));
    }
    let chi = chi(spec, u)?;
    if spec.name == "laplace" && chi != 1.0 {
        return Err(CliError::Invariant(format!(
            "χ = {chi} for the Laplace operator"
        )));
    }
    Ok((id_err, g_max, chi))
}

pub fn check_subsolution(run: &Run) -> Result<Value> {
    let u = run.load_solution()?;
    let spec = run.cfg.spec()?;
    let g = *u.grid();
    let mut us = Vec::new();
    let (cx, cy) = ((g.nx() + 1) / 2, (g.ny() + 1) / 2);
    if g.nx() % 2 == 1 && g.ny() % 2 == 1 && cx >= 3 && cy >= 3 {
        run.progress(format!("solving the coarse level {cx}×{cy}"));
        us.push(solve_on(run, Grid2D::new(cx, cy, g.domain())?)?.u);
    }
    us.push(u.clone());
    run.progress("weak subsolution checks");
    let study = refinement_study(&spec, &us)?;
    let pkg = build_psi(&u);
    let (id_err, g_max, chi) = check_identities(&spec, &u, &pkg)?;

    let mut csv = format!("{SUBSOLUTION_CSV_HEADER}\n");
    for r in &study.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.h,
            r.axis + 1,
            r.sign.symbol(),
            r.max_violation,
            r.worst_node[0],
            r.worst_node[1],
            r.floor,
            r.tol,
            r.pass
        ));
    }
    run.write_text(SUBSOLUTION_CSV, &csv)?;
    let summary = json!({
        "levels": us.iter().map(|u| u.grid().nx()).collect::<Vec<_>>(),
        "c": study.c,
        "worst_shrink": study.worst_shrink.is_finite().then_some(study.worst_shrink),
        "shrink_ok": study.shrink_ok,
        "pass": study.pass,
        "m": pkg.m,
        "gamma_star": pkg.gamma_star,
        "chi": chi,
        "identity_max_err": id_err,
        "g_max": g_max,
    });
    run.write_json(SUBSOLUTION_JSON, summary.clone())?;
    Ok(summary)
}

fn balls(run: &Run) -> Result<Vec<Ball>> {
    Ok(run.cfg.balls.sample(&run.cfg.grid()?)?)
}

pub fn harnack(run: &Run) -> Result<Value> {
    let u = run.load_solution()?;
    let pkg = build_psi(&u);
    let balls = balls(run)?;
    let tau = run.cfg.experiment.tau;
    run.progress(format!("Harnack quotients on {} balls", balls.len()));
    let report: HarnackReport = estimate_k(&pkg, &balls, tau)?;
    if let Some(s) = report
        .samples
        .iter()
        .find(|s| !(s.khat.is_finite() && s.khat >= 0.0))
    {
        return Err(CliError::Invariant(format!("K̂ = {} at {:?}", s.khat, s.y)));
    }
    run.write_text(HARNACK_CSV, &report.to_csv())?;
    let summary = json!({
        "k": report.k,
        "tau": tau,
        "balls": balls.len(),
        "samples": report.samples.len(),
        "single_node": report.single_node_count(),
    });
    run.write_json(HARNACK_JSON, summary.clone())?;
    Ok(summary)
}

struct Geometry {
    pkg: PsiPackage,
    metric: GammaMetric,
    balls: Vec<Ball>,
    lip: f64,
}

fn geometry(run: &Run) -> Result<Geometry> {
    let pkg = build_psi(&run.load_solution()?);
    let metric = GammaMetric::new(pkg.gamma_star)?;
    let lip = lipschitz_estimate(&metric, &pkg.psi);
    Ok(Geometry {
        balls: balls(run)?,
        pkg,
        metric,
        lip,
    })
}

/// Empirical `δ₀`, or `None` when no fraction reaches the pass rate.
fn delta0_emp(geo: &Geometry) -> Result<Option<(f64, f64)>> {
    match empirical_delta0(&geo.metric, &geo.pkg.psi, &geo.balls, geo.lip) {
        Ok(e) => Ok(Some((e.delta0, e.pass_rate))),
        Err(LabError::Input(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

const CONSTANT_PSI: &str = "ψ is constant on every sampled ball";

pub fn cover(run: &Run) -> Result<Value> {
    let k = run
        .read_json(HARNACK_JSON, "harnack")?
        .get("k")
        .and_then(Value::as_f64)
        .ok_or_else(|| {
            CliError::Validation(format!("{} has no `k`", run.path(HARNACK_JSON).display()))
        })?;
    let geo = geometry(run)?;
    let (m, psi) = (&geo.metric, &geo.pkg.psi);
    run.progress(format!(
        "measuring covering constants on {} balls",
        geo.balls.len()
    ));
    let measured: Option<MeasuredConstants> = match measure_constants(m, psi, &geo.balls, k) {
        Ok(c) => Some(c),
        Err(LabError::Input(_)) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(mc) = &measured {
        let v = mc.constants.violations();
        if !v.is_empty() {
            return Err(CliError::Invariant(format!(
                "covering constants: {}",
                v.join("; ")
            )));
        }
    }

    run.progress("elimination probes");
    let probes: Vec<EliminationProbe> = match &measured {
        Some(mc) => {
            let eps = run.cfg.experiment.eps.unwrap_or(mc.constants.eps0);
            geo.balls
                .iter()
                .map(|b| ball_elimination_probe(m, psi, b.y, b.r, eps, mc.constants.delta))
                .collect::<holderlab::Result<_>>()?
        }
        None => geo
            .balls
            .iter()
            .map(|b| EliminationProbe {
                y: b.y,
                r: b.r,
                diam: 0.0,
                n_outer: 0,
                n_inner: 0,
                pass: false,
                skipped: Some(CONSTANT_PSI.into()),
            })
            .collect(),
    };

    let mut rows = Vec::with_capacity(probes.len());
    for p in &probes {
        let cloud = psi.restrict(p.y, p.r)?;
        let diam = m.diam(&cloud)?;
        let osc = cloud_osc(&cloud);
        let bound = component_osc(&geo.pkg, diam.value)?;
        if !diam.subsampled && osc.iter().any(|&o| o > bound * (1.0 + 1e-9) + 1e-12) {
            return Err(CliError::Invariant(format!(
                "component oscillation {osc:?} exceeds diam/(2nM) = {bound} on B({:?}, {})",
                p.y, p.r
            )));
        }
        rows.push(CoverRow {
            y: p.y,
            r: p.r,
            diam: diam.value,
            osc,
            pass: p.pass,
        });
    }
    let valid: Vec<&EliminationProbe> = probes.iter().filter(|p| p.skipped.is_none()).collect();
    let passed = valid.iter().filter(|p| p.pass).count();
    let skipped: Vec<Value> = probes
        .iter()
        .filter_map(|p| {
            p.skipped
                .as_ref()
                .map(|s| json!({ "y": p.y, "r": p.r, "reason": s }))
        })
        .collect();

    run.progress("empirical δ₀");
    let emp = delta0_emp(&geo)?;
    let (alpha_theory, alpha_source) = match (&measured, emp) {
        (Some(mc), _) => (Some(mc.constants.alpha), "constants"),
        (None, Some((d0, _))) => (Some(alpha_from_delta0(d0)?), "delta0_emp"),
        (None, None) => (None, "none"),
    };

    run.write_text(COVER_CSV, &rows_to_csv(&rows))?;
    let summary = json!({
        "k": k,
        "constants": measured.as_ref().map(|mc| mc.constants),
        "balls": measured.as_ref().map(|mc| &mc.balls),
        "eps": measured.as_ref().map(|mc| run.cfg.experiment.eps.unwrap_or(mc.constants.eps0)),
        "elimination": {
            "valid": valid.len(),
            "passed": passed,
            "rate": (!valid.is_empty()).then(|| passed as f64 / valid.len() as f64),
            "skipped": skipped,
        },
        "lip": geo.lip,
        "delta0_emp": emp.map(|e| e.0),
        "halving_rate": emp.map(|e| e.1),
        "delta0_theory": measured.as_ref().map(|mc| mc.constants.delta0),
        "alpha_theory": alpha_theory,
        "alpha_theory_source": alpha_source,
    });
    run.write_json(COVER_JSON, summary.clone())?;
    Ok(summary)
}

pub fn decay(run: &Run) -> Result<Value> {
    let geo = geometry(run)?;
    let grid = *geo.pkg.grid();
    let cover = run.read_json_opt(COVER_JSON, "cover")?;
    let from_cover = |key: &str| {
        cover
            .as_ref()
            .and_then(|c| c.get(key))
            .and_then(Value::as_f64)
    };
    let alpha_theory = from_cover("alpha_theory");
    let emp = delta0_emp(&geo)?;
    let delta0 = match (run.cfg.experiment.delta0, emp) {
        (Some(d), _) => d,
        (None, Some((d, _))) => d,
        (None, None) => {
            return Err(CliError::Invariant(
                "no radius fraction reaches the halving pass rate; set experiment.delta0".into(),
            ))
        }
    };
    let (y, d) = run.cfg.decay_ball(&grid);
    let setup = DecaySetup {
        delta0,
        m_max: run.cfg.decay.m_max,
        alpha_theory: alpha_theory.unwrap_or(0.0),
        m_sup: geo.pkg.m,
        diam_omega: grid.diameter(),
        lip: geo.lip,
    };
    run.progress(format!("decay trace from B({y:?}, {d}) with δ₀ = {delta0}"));
    let trace = decay_trace(&geo.metric, &geo.pkg.psi, y, d, &setup)?;
    run.write_text(DECAY_CSV, &rows_to_csv(&trace.rows()))?;
    let bound_ok = trace.bound_ok.iter().all(|&b| b);
    let halving = trace.halving_pass.iter().filter(|&&b| b).count();
    let summary = json!({
        "y": y,
        "d": d,
        "levels": trace.radii.len(),
        "truncated": trace.truncated,
        "alpha_emp": trace.alpha_emp,
        "alpha_theory": alpha_theory,
        "delta0_used": delta0,
        "delta0_emp": emp.map(|e| e.0),
        "delta0_theory": from_cover("delta0_theory"),
        "constants": cover.as_ref().and_then(|c| c.get("constants")).cloned(),
        "bound_ok": bound_ok,
        "halving_steps_passed": halving,
    });
    run.write_json(DECAY_JSON, summary.clone())?;
    if !bound_ok {
        let i = trace.bound_ok.iter().position(|&b| !b).unwrap_or(0);
        return Err(CliError::Invariant(format!(
            "decay bound fails at r = {}: diam {} > {}",
            trace.radii[i], trace.diams[i], trace.bound[i]
        )));
    }
    Ok(summary)
}

pub const HOLDER_CSV_HEADER: &str = "d,nodes,seminorm,product,sampled,roundoff";

pub fn holder(run: &Run) -> Result<Value> {
    let (alpha, source) = match run.cfg.experiment.alpha {
        Some(a) => (a, "config"),
        None => {
            let emp = run
                .read_json(DECAY_JSON, "decay")?
                .get("alpha_emp")
                .and_then(Value::as_f64)
                .ok_or_else(|| {
                    CliError::Validation(format!(
                        "{} has no `alpha_emp`",
                        run.path(DECAY_JSON).display()
                    ))
                })?;
            (emp.min(ALPHA_CAP), "decay")
        }
    };
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CliError::Invariant(format!(
            "exponent {alpha} from {source} is outside (0, 1]"
        )));
    }
    let psi = run.load_solution()?.gradient();
    run.progress(format!("Hölder seminorms at α = {alpha}"));
    let h = &run.cfg.holder;
    let rows = d_scaling_probe(&psi, alpha, &h.d_values, h.pair_budget, run.cfg.balls.seed)?;
    let ratio = scaling_ratio(&rows);
    let mut csv = format!("{HOLDER_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.d, r.nodes, r.seminorm, r.product, r.sampled, r.roundoff
        ));
    }
    run.write_text(HOLDER_CSV, &csv)?;
    let summary = json!({
        "alpha": alpha,
        "alpha_source": source,
        "rows": rows,
        "ratio": ratio.is_finite().then_some(ratio),
        "ratio_limit": SCALING_RATIO_LIMIT,
        "pass": ratio <= SCALING_RATIO_LIMIT,
    });
    run.write_json(HOLDER_JSON, summary.clone())?;
    Ok(summary)
}

/// Runs the metric property sweep; writes `metric.json` when a run is given.
pub fn verify_metric(run: Option<&Run>, seed: u64) -> Result<Value> {
    let size = SuiteSize::default();
    let rep = run_suite(seed, &size)?;
    let summary = json!({
        "seed": seed,
        "size": size,
        "report": rep,
        "pass": rep.pass(),
    });
    if let Some(run) = run {
        run.write_json(METRIC_JSON, summary.clone())?;
    }
    if !rep.pass() {
        return Err(CliError::Invariant(format!(
            "metric sweep failures: {} axiom, {} sandwich, {} oracle",
            rep.axiom_failures, rep.sandwich_failures, rep.oracle_failures
        )));
    }
    Ok(summary)
}

/// Merges the stage summaries present in the run directory.
pub fn report(run: &Run) -> Result<Value> {
    let mut out = serde_json::Map::new();
    let mut found = 0;
    for (key, file) in SUMMARIES {
        if let Some(Value::Object(mut m)) = run.read_json_opt(file, key)? {
            m.remove("header");
            m.remove("schema");
            out.insert(key.into(), Value::Object(m));
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::Missing {
            path: run.path(SOLVE_JSON),
            stage: "solve",
        });
    }
    let alpha_emp = out.get("decay").and_then(|d| d.get("alpha_emp")).cloned();
    let mut body = serde_json::Map::new();
    body.insert("config".into(), json!(run.cfg));
    body.insert("alpha_emp".into(), alpha_emp.unwrap_or(Value::Null));
    body.extend(out);
    let body = Value::Object(body);
    run.write_json(REPORT_JSON, body.clone())?;
    Ok(body)
}

/// The whole pipeline in order.
pub fn run_all(run: &Run) -> Result<Value> {
    solve(run)?;
    check_subsolution(run)?;
    harnack(run)?;
    cover(run)?;
    decay(run)?;
    holder(run)?;
    report(run)
}
