//! Config-driven pipeline around `holderlab`: solve, build `ψ = Du`, check
//! the subsolution property, estimate weak Harnack constants, run the
//! covering and decay experiments and collect the summaries.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

pub use error::{CliError, Result};
