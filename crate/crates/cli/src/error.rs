use std::path::PathBuf;

use safe_mdp::Error;
use serde_json::{json, Value};
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Missing or contradictory command-line parameters.
    #[error("{0}")]
    Usage(String),

    /// A solver finished but found no policy meeting the safety bound; the
    /// partial results are still reported.
    #[error("infeasible: {message}")]
    Infeasible { message: String, results: Value },

    #[error(transparent)]
    Solver(#[from] Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for bad input or parameters, 3 for I/O, 4 for
    /// a non-transient chain, 5 for an infeasible bound, 6 when enumeration
    /// would exceed its cap and 1 for any other numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Usage(_) => 2,
            CliError::Infeasible { .. } => 5,
            CliError::Solver(e) => match e {
                Error::Parse { .. }
                | Error::Validation(_)
                | Error::DimensionMismatch(_)
                | Error::OrderingMismatch
                | Error::MissingState(_)
                | Error::InvalidPolicy(_)
                | Error::InvalidArgument(_) => 2,
                Error::NotTransient { .. } => 4,
                Error::Infeasible(_) => 5,
                Error::CapExceeded { .. } => 6,
                _ => 1,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "Io",
            CliError::Usage(_) => "Usage",
            CliError::Infeasible { .. } => "Infeasible",
            CliError::Solver(e) => match e {
                Error::Parse { .. } => "Parse",
                Error::Validation(_) => "Validation",
                Error::DimensionMismatch(_) => "DimensionMismatch",
                Error::OrderingMismatch => "OrderingMismatch",
                Error::MissingState(_) => "MissingState",
                Error::InvalidPolicy(_) => "InvalidPolicy",
                Error::InvalidArgument(_) => "InvalidArgument",
                Error::NotTransient { .. } => "NotTransient",
                Error::MaxIterExceeded { .. } => "MaxIterExceeded",
                Error::Diverging { .. } => "Diverging",
                Error::Infeasible(_) => "Infeasible",
                Error::CapExceeded { .. } => "CapExceeded",
                Error::Unbounded => "Unbounded",
                Error::NumericalInstability { .. } => "NumericalInstability",
                Error::PathExplosion { .. } => "PathExplosion",
            },
        }
    }

    /// Structured fields for the report's `error` entry.
    pub fn to_json(&self) -> Value {
        let mut out = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        let extra = match self {
            CliError::Solver(Error::Validation(report)) => Some((
                "violations",
                Value::from(
                    report
                        .violations
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>(),
                ),
            )),
            CliError::Solver(Error::NotTransient { spectral_radius }) => {
                Some(("spectral_radius", crate::report::num(*spectral_radius)))
            }
            CliError::Solver(Error::CapExceeded { count, cap }) => Some((
                "enumeration",
                json!({ "count": count.to_string(), "cap": cap }),
            )),
            _ => None,
        };
        if let Some((key, value)) = extra {
            out[key] = value;
        }
        out
    }

    /// Partial results carried by the error, if any.
    pub fn results(&self) -> Option<&Value> {
        match self {
            CliError::Infeasible { results, .. } => Some(results),
            _ => None,
        }
    }
}
