//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use holderlab::equation::EquationSpec;
use holderlab::expr::{Expr, Var};
use holderlab::field::{Grid2D, Point};
use holderlab::sampler::BallSampler;
use holderlab::solver::SolverOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub equation: EquationConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_balls")]
    pub balls: BallSampler,
    #[serde(default)]
    pub experiment: ExperimentParams,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub holder: HolderConfig,
    /// Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

/// A registry name, or inline coefficients in `x1, x2, z, p1, p2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationConfig {
    pub name: Option<String>,
    pub a11: Option<String>,
    pub a12: Option<String>,
    pub a22: Option<String>,
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "unit_domain")]
    pub domain: [f64; 4],
    /// Dirichlet data in `x1, x2`.
    #[serde(default = "zero_expr")]
    pub boundary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    /// Inner radius fraction of the Harnack quotient.
    pub tau: f64,
    /// Cover radius fraction for the elimination probe (default `ε₀`).
    pub eps: Option<f64>,
    /// Radius fraction for the decay trace (default: the empirical `δ₀`).
    pub delta0: Option<f64>,
    /// Exponent for the Hölder scaling stage (default `min{alpha_emp, 0.9}`).
    pub alpha: Option<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            tau: 0.25,
            eps: None,
            delta0: None,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// Center; defaults to the node nearest the domain center.
    pub y: Option<Point>,
    /// Outer radius; defaults to 0.9 times the center's distance to the boundary.
    pub d: Option<f64>,
    pub m_max: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            y: None,
            d: None,
            m_max: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderConfig {
    pub d_values: Vec<f64>,
    pub pair_budget: usize,
}

impl Default for HolderConfig {
    fn default() -> Self {
        Self {
            d_values: vec![0.05, 0.1, 0.2, 0.4],
            pair_budget: 10_000_000,
        }
    }
}

fn default_balls() -> BallSampler {
    BallSampler {
        count: 24,
        seed: 0,
        r_min: 0.1,
        r_max: 0.3,
    }
}

fn unit_domain() -> [f64; 4] {
    [0.0, 1.0, 0.0, 1.0]
}

fn zero_expr() -> String {
    "0".into()
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.spec()?;
        self.boundary()?;
        self.solver.validate()?;
        self.balls.validate()?;
        let e = &self.experiment;
        if !(e.tau > 0.0 && e.tau < 0.5) {
            return Err(invalid(format!(
                "experiment.tau must lie in (0, 1/2), got {}",
                e.tau
            )));
        }
        if let Some(eps) = e.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(invalid(format!(
                    "experiment.eps must be positive, got {eps}"
                )));
            }
        }
        if let Some(d0) = e.delta0 {
            if !(d0 > 0.0 && d0 < 0.5) {
                return Err(invalid(format!(
                    "experiment.delta0 must lie in (0, 1/2), got {d0}"
                )));
            }
        }
        if let Some(a) = e.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(invalid(format!(
                    "experiment.alpha must lie in (0, 1], got {a}"
                )));
            }
        }
        if self.decay.m_max == 0 {
            return Err(invalid("decay.m_max must be at least 1"));
        }
        let (y, d) = self.decay_ball(&grid);
        if !(d > 0.0) || grid.distance_to_boundary(y) < d * (1.0 - 1e-12) {
            return Err(invalid(format!(
                "decay ball B({y:?}, {d}) is not inside the domain"
            )));
        }
        if self.holder.d_values.is_empty() || self.holder.d_values.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid(
                "holder.d_values must be a nonempty list of positive numbers",
            ));
        }
        if self.holder.pair_budget == 0 {
            return Err(invalid("holder.pair_budget must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Ok(Grid2D::new(self.grid.nx, self.grid.ny, self.grid.domain)?)
    }

    pub fn spec(&self) -> Result<EquationSpec> {
        let eq = &self.equation;
        let inline = [&eq.a11, &eq.a12, &eq.a22, &eq.b];
        if inline.iter().all(|c| c.is_none()) {
            let name = eq.name.as_deref().ok_or_else(|| {
                invalid("equation needs `name` or inline coefficients a11, a12, a22")
            })?;
            return Ok(EquationSpec::by_name(name)?);
        }
        match (&eq.a11, &eq.a12, &eq.a22) {
            (Some(a11), Some(a12), Some(a22)) => {
                let name = eq.name.as_deref().unwrap_or("inline");
                let b = eq.b.as_deref().unwrap_or("0");
                Ok(EquationSpec::from_expressions(name, a11, a12, a22, b)?)
            }
            _ => Err(invalid("inline equations need all of a11, a12, a22")),
        }
    }

    pub fn boundary(&self) -> Result<Expr> {
        let e = Expr::parse(&self.grid.boundary)?;
        if [Var::Z, Var::P1, Var::P2].iter().any(|&v| e.uses(v)) {
            return Err(invalid("grid.boundary may only use x1 and x2"));
        }
        Ok(e)
    }

    /// Center (snapped to a node) and radius of the decay trace.
    pub fn decay_ball(&self, grid: &Grid2D) -> (Point, f64) {
        let [a1, b1, a2, b2] = grid.domain();
        let raw = self.decay.y.unwrap_or([0.5 * (a1 + b1), 0.5 * (a2 + b2)]);
        let (i, j) = grid.nearest_node(raw);
        let y = grid.node(i, j);
        let d = self.decay.d.unwrap_or(0.9 * grid.distance_to_boundary(y));
        (y, d)
    }

    /// SHA-256 of the canonical JSON form, truncated to 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
