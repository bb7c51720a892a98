//! Numerical laboratory for the covering-method proof of gradient Hölder
//! estimates for quasilinear elliptic equations in the plane.
//!
//! The pipeline: solve `A^{ij}(x,u,Du)D_{ij}u + B = 0` ([`solver`]), form
//! `ψ = Du` and the auxiliary functions `v = ±γ*ψ^k + |ψ|²`
//! ([`subsolution`]), estimate weak Harnack constants ([`harnack`]) and run
//! the covering / oscillation-decay experiments ([`covering`]) in the
//! weighted metric `dist_γ` ([`gamma_metric`]).

pub mod banded;
pub mod covering;
pub mod equation;
pub mod error;
pub mod expr;
pub mod field;
pub mod gamma_metric;
pub mod harnack;
pub mod metric_suite;
pub mod sampler;
pub mod solver;
pub mod subsolution;

pub use error::{LabError, Result};
