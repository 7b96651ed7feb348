use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataio::SyntheticSpec;
use crate::forest::ForestConfig;
use crate::ica::IcaConfig;
use crate::models::{flatten_width, DEFAULT_INPUT_LENGTH};
use crate::nn::TrainConfig;
use crate::partial::WindowSpec;
use crate::types::Estimator;

pub const DEFAULT_MASTER_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
    Manifest(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// A named window distribution for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub window: WindowSpec,
}

/// The four presets, widest window first.
pub fn preset_conditions() -> Vec<Condition> {
    ["i", "ii", "iii", "iv"]
        .iter()
        .enumerate()
        .map(|(k, name)| Condition {
            name: name.to_string(),
            window: WindowSpec::condition(k + 1),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub window: WindowSpec,
    pub input_length: usize,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub ica: IcaConfig,
    pub k_folds: usize,
    pub estimators: Vec<Estimator>,
    pub output_dir: PathBuf,
    /// `None` defers to the environment, then to [`DEFAULT_MASTER_SEED`].
    pub master_seed: Option<u64>,
    /// Used by sweeps only.
    pub conditions: Vec<Condition>,
    /// Test-cell inputs used for each sensitivity profile; 0 disables them.
    pub sensitivity_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            window: WindowSpec::default(),
            input_length: DEFAULT_INPUT_LENGTH,
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            ica: IcaConfig::default(),
            k_folds: 5,
            estimators: vec![Estimator::SohCnn, Estimator::DsohCnn, Estimator::RfCnn],
            output_dir: PathBuf::from("out"),
            master_seed: None,
            conditions: preset_conditions(),
            sensitivity_samples: 32,
        }
    }
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(DEFAULT_MASTER_SEED)
    }

    pub fn runs(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }

    /// Whether any CNN has to be trained.
    pub fn needs_cnn(&self) -> bool {
        self.estimators.iter().any(|e| *e != Estimator::RfIca)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.estimators.is_empty() {
            return bad("estimators must not be empty".into());
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds {} must be >= 2", self.k_folds));
        }
        if flatten_width(self.input_length).is_none() {
            return bad(format!("input_length {} too short for the network", self.input_length));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        }
        self.window.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.train.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.forest.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.ica.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        for c in &self.conditions {
            c.window
                .validate()
                .map_err(|e| PipelineError::InvalidConfig(format!("condition {}: {e}", c.name)))?;
        }
        Ok(())
    }
}
