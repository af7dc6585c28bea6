//! Experiment runner for `rent-core`: configuration, file formats, the
//! training loop, seed replication, sweeps and result emission.

use std::path::{Path, PathBuf};

use thiserror::Error;

use rent_core::analysis::AnalysisError;
use rent_core::{ClassifierError, DataError, RiskError, TransitionError};

pub mod config;
pub mod experiment;
pub mod io;
pub mod sweep;
pub mod train;

pub use config::{DataSource, ExperimentConfig, TransitionSource};
pub use experiment::{analyze, run_experiment, run_seed, ExperimentReport, RunResult};
pub use sweep::{alpha_sweep, budget_sweep, SweepRow, SweepTable};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
