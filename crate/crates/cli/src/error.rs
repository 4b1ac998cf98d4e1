use cpt_core::experiments::ExperimentError;
use cpt_core::liouvillian::LiouvillianError;
use cpt_core::spectroscopy::SpectroscopyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("fit failed on {failed} of {total} cells")]
    FitFailures { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Solver(_) => 3,
            CliError::FitFailures { .. } => 4,
        }
    }
}

impl From<SpectroscopyError> for CliError {
    fn from(e: SpectroscopyError) -> Self {
        match e {
            SpectroscopyError::Grid(reason) => CliError::Config { field: "spectrum.delta_grid_Hz".into(), reason },
            SpectroscopyError::Geometry(reason) => CliError::Config { field: "geometry".into(), reason },
            SpectroscopyError::Unreachable(t) => CliError::Config {
                field: "absorption.target_transparency".into(),
                reason: format!("{t} is unreachable"),
            },
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<LiouvillianError> for CliError {
    fn from(e: LiouvillianError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Map(reason) => CliError::Config { field: "intensity".into(), reason },
            ExperimentError::Dataset(reason) => CliError::Config { field: "calibrate.data_csv".into(), reason },
            ExperimentError::Spectroscopy(s) => s.into(),
        }
    }
}
