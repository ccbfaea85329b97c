//! Batch front end: JSON-configured runs of the simulation harness, the
//! frequentist estimators, and the posterior samplers, with CSV and JSON
//! reports that embed the exact configuration that produced them.

pub mod config;
pub mod data;
pub mod run;

use thiserror::Error;

/// Stage-tagged errors mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2: configuration parsing or validation failed.
    #[error("config error: {0}")]
    Config(String),
    /// Exit code 3: input data could not be read or is inconsistent.
    #[error("data error: {0}")]
    Data(String),
    /// Exit code 4: a numerical routine failed.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Machine-readable error payload printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "stage": self.stage(),
                "code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

/// Estimation-stage errors: structural problems with inputs count as data
/// errors, solver and factorization failures as numerical ones.
pub(crate) fn from_core(err: svyest::SvyError) -> CliError {
    use svyest::SvyError::*;
    match err {
        Invalid(_) | Dimension(_) | SampleTooLarge { .. } | TooFewObservations(_) => {
            CliError::Data(err.to_string())
        }
        RankDeficient | Numerical(_) | NonConvergence(_) => CliError::Numerical(err.to_string()),
    }
}
