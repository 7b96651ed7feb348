use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::models::SensitivityProfile;
use crate::partial::WindowSpec;
use crate::types::Estimator;

pub const REPORT_FORMAT: &str = "sohforge-report";
pub const REPORT_VERSION: u32 = 1;
/// Aggregate MAE is the mean over every test cycle, pooled across cells
/// and folds.
pub const MAE_POOLING: &str = "cycles";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: Estimator,
    pub fold: usize,
    pub cell_id: String,
    pub cycle_index: u32,
    pub soh_true: f64,
    pub soh_est: f64,
    pub error_pct: f64,
    /// Rollout anchor: the estimate is the true first-cycle SOH.
    pub anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub estimator: Estimator,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_cells: Vec<String>,
    pub validation_cells: Vec<String>,
    pub test_cells: Vec<String>,
    pub training: Vec<TrainingSummary>,
    /// SOH-CNN importance over ΔSOH-CNN importance in the fusion forest.
    pub importance_ratio: Option<f64>,
    pub rf_cnn_importances: Option<Vec<f64>>,
    pub rf_ica_test_cycles: Option<usize>,
    pub rf_ica_skipped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub mae: f64,
    pub cycles: usize,
    /// Test cycles without an estimate (RF_ICA cycles lacking a feature).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSensitivity {
    pub model: Estimator,
    /// First-half over second-half sensitivity mass, per channel.
    pub half_ratios: Vec<f64>,
    pub profile: SensitivityProfile,
}

impl NamedSensitivity {
    pub fn new(model: Estimator, profile: SensitivityProfile) -> Self {
        let half_ratios = (0..profile.channels.len()).map(|c| profile.half_ratio(c)).collect();
        NamedSensitivity {
            model,
            half_ratios,
            profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_seconds: f64,
    pub ica_seconds: f64,
    pub fold_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub condition: Option<String>,
    pub master_seed: u64,
    pub k_folds: usize,
    pub input_length: usize,
    pub window: WindowSpec,
    pub estimators: Vec<Estimator>,
    pub mae_pooling: String,
    pub aggregate: Vec<EstimatorSummary>,
    pub folds: Vec<FoldSummary>,
    pub rows: Vec<EstimateRow>,
    pub sensitivity: Vec<NamedSensitivity>,
    pub timings: Timings,
}

impl EvaluationReport {
    pub fn mae(&self, e: Estimator) -> Option<f64> {
        self.aggregate.iter().find(|a| a.estimator == e).map(|a| a.mae)
    }

    pub fn importance_ratios(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.importance_ratio).collect()
    }

    pub fn rows_for(&self, e: Estimator) -> impl Iterator<Item = &EstimateRow> {
        self.rows.iter().filter(move |r| r.estimator == e)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub name: String,
    pub window: WindowSpec,
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    pub conditions: Vec<ConditionOutcome>,
}

impl SweepReport {
    /// Aggregate MAE per estimator and condition; `None` for failed runs.
    pub fn grid(&self) -> Vec<(Estimator, Vec<Option<f64>>)> {
        self.estimators
            .iter()
            .map(|&e| {
                let row = self
                    .conditions
                    .iter()
                    .map(|c| c.report.as_ref().and_then(|r| r.mae(e)))
                    .collect();
                (e, row)
            })
            .collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_grid(
    path: &Path,
    columns: &[String],
    rows: &[(Estimator, Vec<Option<f64>>)],
) -> Result<(), PipelineError> {
    write_file(path, |w| {
        writeln!(w, "estimator,{}", columns.join(","))?;
        for (e, vals) in rows {
            let cells: Vec<String> = vals
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "failed".into()))
                .collect();
            writeln!(w, "{e},{}", cells.join(","))?;
        }
        Ok(())
    })
}

/// Writes `report.json`, `mae_table.csv`, `trajectories/<cell>.csv`,
/// `importance_ratios.csv` and `sensitivity/<model>.csv` under `dir`.
pub fn write_evaluation(dir: &Path, report: &EvaluationReport) -> Result<(), PipelineError> {
    create_dir(dir)?;
    write_file(&dir.join("report.json"), |w| w.write_all(report.to_json().as_bytes()))?;

    let column = report.condition.clone().unwrap_or_else(|| "mae".into());
    let grid: Vec<(Estimator, Vec<Option<f64>>)> =
        report.aggregate.iter().map(|a| (a.estimator, vec![Some(a.mae)])).collect();
    write_grid(&dir.join("mae_table.csv"), &[column], &grid)?;

    let traj = dir.join("trajectories");
    create_dir(&traj)?;
    let mut by_cell: BTreeMap<&str, Vec<&super::EstimateRow>> = BTreeMap::new();
    for r in &report.rows {
        by_cell.entry(&r.cell_id).or_default().push(r);
    }
    for (cell, rows) in by_cell {
        write_file(&traj.join(format!("{}.csv", safe_name(cell))), |w| {
            writeln!(w, "cycle_index,soh_true,soh_est,estimator")?;
            for r in rows {
                writeln!(w, "{},{},{},{}", r.cycle_index, r.soh_true, r.soh_est, r.estimator)?;
            }
            Ok(())
        })?;
    }

    if report.estimators.contains(&Estimator::RfCnn) {
        write_file(&dir.join("importance_ratios.csv"), |w| {
            writeln!(w, "fold,importance_ratio")?;
            for f in &report.folds {
                let v = f.importance_ratio.map(|x| x.to_string()).unwrap_or_default();
                writeln!(w, "{},{v}", f.fold)?;
            }
            Ok(())
        })?;
    }

    if !report.sensitivity.is_empty() {
        let sdir = dir.join("sensitivity");
        create_dir(&sdir)?;
        for s in &report.sensitivity {
            write_file(&sdir.join(format!("{}.csv", s.model)), |w| s.profile.write_csv(w))?;
        }
    }
    Ok(())
}

/// Writes one evaluation directory per successful condition, the
/// estimator by condition `mae_table.csv` and `sweep.json`.
pub fn write_sweep(dir: &Path, sweep: &SweepReport) -> Result<(), PipelineError> {
    create_dir(dir)?;
    for c in &sweep.conditions {
        if let Some(r) = &c.report {
            write_evaluation(&dir.join(format!("condition_{}", safe_name(&c.name))), r)?;
        }
    }
    let columns: Vec<String> = sweep.conditions.iter().map(|c| c.name.clone()).collect();
    write_grid(&dir.join("mae_table.csv"), &columns, &sweep.grid())?;

    #[derive(Serialize)]
    struct Summary<'a> {
        master_seed: u64,
        conditions: Vec<ConditionSummary<'a>>,
    }
    #[derive(Serialize)]
    struct ConditionSummary<'a> {
        name: &'a str,
        window: &'a WindowSpec,
        aggregate: Option<&'a [EstimatorSummary]>,
        importance_ratios: Option<Vec<f64>>,
        error: Option<&'a str>,
    }
    let summary = Summary {
        master_seed: sweep.master_seed,
        conditions: sweep
            .conditions
            .iter()
            .map(|c| ConditionSummary {
                name: &c.name,
                window: &c.window,
                aggregate: c.report.as_ref().map(|r| r.aggregate.as_slice()),
                importance_ratios: c.report.as_ref().map(|r| r.importance_ratios()),
                error: c.error.as_deref(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("sweep.json"), |w| w.write_all(text.as_bytes()))
}
