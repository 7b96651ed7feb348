//! End-to-end experiments: data, windows, cross-validated training of the
//! CNN estimators and forests, evaluation and report writing.
//!
//! The master seed fans out into named substreams: `data`, `windows`,
//! `folds`, `split`, `init`, `shuffle` and `bootstrap`, so every stage can
//! be reproduced on its own.

mod config;
mod metrics;
mod report;
mod run;

pub use config::{preset_conditions, Condition, DataSource, ExperimentConfig, DEFAULT_MASTER_SEED};
pub use metrics::{aggregate_mae, mae};
pub use report::{
    write_evaluation, write_sweep, ConditionOutcome, EstimateRow, EstimatorSummary, EvaluationReport,
    FoldSummary, NamedSensitivity, SweepReport, Timings, TrainingSummary, MAE_POOLING, REPORT_FORMAT,
};
pub use run::{
    compute_ic_features, fit_models, holdout_split, load_cells, prepare, run_condition_sweep, run_evaluation, run_rf_cnn,
    run_rf_ica, sample_cell_windows, window_seed, FittedModels, PreparedCell, RunOptions,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::dataio::DataError;
use crate::forest::ForestError;
use crate::ica::IcaError;
use crate::models::ModelError;
use crate::partial::PartialError;
use crate::types::Estimator;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("true SOH must be > 0, got {0}")]
    NonPositiveTruth(f64),
    #[error("estimate {0} is not finite")]
    NonFiniteEstimate(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("cell {cell} cycle {cycle}: {source}")]
    Window {
        cell: String,
        cycle: u32,
        #[source]
        source: PartialError,
    },
    #[error("fold {fold} {estimator}{}: {source}", cell.as_ref().map(|c| format!(" cell {c}")).unwrap_or_default())]
    Model {
        fold: usize,
        estimator: Estimator,
        cell: Option<String>,
        #[source]
        source: ModelError,
    },
    #[error("cell {cell} cycle {cycle}: ICA: {source}")]
    Ica {
        cell: String,
        cycle: u32,
        #[source]
        source: IcaError,
    },
    #[error("fold {fold} {estimator}: forest: {source}")]
    Forest {
        fold: usize,
        estimator: Estimator,
        #[source]
        source: ForestError,
    },
    #[error("fold {fold}: no {role} cycle has an IC feature")]
    AllFeaturesAbsent { fold: usize, role: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl PipelineError {
    /// Configuration and input-validation failures, as opposed to failures
    /// during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::InvalidConfig(_) => true,
            PipelineError::Data(e) => !matches!(e, DataError::Io { .. }),
            _ => false,
        }
    }
}
