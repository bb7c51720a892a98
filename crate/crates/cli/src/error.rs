use std::io;
use std::path::PathBuf;

use holderlab::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("missing artifact {}: run `{stage}` first", path.display())]
    Missing { path: PathBuf, stage: &'static str },

    #[error("solver failure: {0}")]
    Solver(String),

    /// A property that holds by construction came out false.
    #[error("experiment invariant violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Missing { .. } | CliError::Io { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Input(_) | LabError::Expr(_) => CliError::Validation(e.to_string()),
            LabError::Convergence { .. } => CliError::Solver(e.to_string()),
            LabError::Structure { .. } => CliError::Invariant(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_errors_map_to_exit_codes() {
        let code = |e: LabError| CliError::from(e).exit_code();
        assert_eq!(code(LabError::Input("x".into())), 2);
        assert_eq!(code(LabError::Expr("x".into())), 2);
        let conv = LabError::Convergence {
            iterations: 3,
            residual: 1.0,
            reason: "stalled".into(),
        };
        assert_eq!(code(conv), 3);
        let st = LabError::Structure {
            location: "node 4".into(),
            detail: "λ ≤ 0".into(),
        };
        assert_eq!(code(st), 4);
    }
}
