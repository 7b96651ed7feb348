use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use super::report::{
    ConditionOutcome, EstimateRow, EstimatorSummary, EvaluationReport, FoldSummary, NamedSensitivity, SweepReport,
    Timings, TrainingSummary, MAE_POOLING, REPORT_FORMAT, REPORT_VERSION,
};
use super::{aggregate_mae, mae, Condition, DataSource, ExperimentConfig, PipelineError};
use crate::dataio::{generate_synthetic, ingest_csv, ingest_manifest, make_cv_folds, split_by_cell, DatasetSplit};
use crate::forest::{forest_fit, ForestConfig, ForestModel};
use crate::ica::IcFeature;
use crate::models::{build_dsoh_cnn, build_soh_cnn, rollout_soh, train_estimator, CnnEstimator, ModelError};
use crate::nn::TrainConfig;
use crate::partial::{sample_window_bounds, to_model_input, truncate, window_rng, ModelInput, WindowBounds, WindowSpec};
use crate::seed;
use crate::types::{validate_cell, CellRecord, Estimator, PartialWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Concurrent work units; 0 uses every available core.
    pub jobs: usize,
}

fn with_pool<T: Send>(opts: &RunOptions, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// One cell's sampled windows and the network inputs built from them.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub cell_id: String,
    pub nominal_capacity: f64,
    pub cycle_index: Vec<u32>,
    pub soh: Vec<f64>,
    pub bounds: Vec<WindowBounds>,
    pub windows: Vec<PartialWindow>,
    /// `[V_t, Q_t]` inputs; empty when no CNN is configured.
    pub single: Vec<ModelInput>,
    /// `[V_t, Q_t, V_t-1, Q_t-1]` inputs; entry 0 is `None`.
    pub paired: Vec<Option<ModelInput>>,
}

fn estimator_code(e: Estimator) -> u64 {
    Estimator::ALL.iter().position(|x| *x == e).unwrap() as u64
}

pub fn load_cells(config: &ExperimentConfig) -> Result<Vec<CellRecord>, PipelineError> {
    let cells = match &config.data {
        DataSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = seed::derive(seed::derive_named(config.seed(), "data"), &[spec.seed]);
            generate_synthetic(&spec)?
        }
        DataSource::Csv(path) => ingest_csv(path)?,
        DataSource::Manifest(path) => ingest_manifest(path)?,
    };
    let problems: Vec<String> = cells.iter().flat_map(validate_cell).map(|v| v.to_string()).collect();
    if !problems.is_empty() {
        return Err(PipelineError::InvalidConfig(format!(
            "dataset has {} violations; first: {}",
            problems.len(),
            problems[0]
        )));
    }
    Ok(cells)
}

/// Seed of the window substream for `spec`.
pub fn window_seed(config: &ExperimentConfig, spec: &WindowSpec) -> u64 {
    seed::derive(seed::derive_named(config.seed(), "windows"), &[spec.seed])
}

/// Draws and cuts one window per cycle of `cell`.
pub fn sample_cell_windows(
    cell: &CellRecord,
    spec: &WindowSpec,
    spec_seed: u64,
) -> Result<(Vec<WindowBounds>, Vec<PartialWindow>), PipelineError> {
    let mut bounds = Vec::with_capacity(cell.cycles.len());
    let mut windows = Vec::with_capacity(cell.cycles.len());
    for c in &cell.cycles {
        let mut rng = window_rng(spec_seed, &cell.cell_id, c.cycle_index);
        let b = sample_window_bounds(spec, c.cell_capacity, &mut rng);
        let w = truncate(&c.curve, b.dod_initial, b.dod_final, c.cell_capacity, c.cycle_index).map_err(|source| {
            PipelineError::Window {
                cell: cell.cell_id.clone(),
                cycle: c.cycle_index,
                source,
            }
        })?;
        bounds.push(b);
        windows.push(w);
    }
    Ok((bounds, windows))
}

fn prepare_cell(
    config: &ExperimentConfig,
    cell: &CellRecord,
    spec: &WindowSpec,
    spec_seed: u64,
) -> Result<PreparedCell, PipelineError> {
    let (bounds, windows) = sample_cell_windows(cell, spec, spec_seed)?;
    let (mut single, mut paired) = (Vec::new(), Vec::new());
    if config.needs_cnn() {
        let wrap = |i: usize, source| PipelineError::Window {
            cell: cell.cell_id.clone(),
            cycle: cell.cycles[i].cycle_index,
            source,
        };
        let (l, nom) = (config.input_length, cell.nominal_capacity);
        for (i, w) in windows.iter().enumerate() {
            single.push(to_model_input(w, None, l, nom).map_err(|e| wrap(i, e))?);
            paired.push(if i == 0 {
                None
            } else {
                Some(to_model_input(w, Some(&windows[i - 1]), l, nom).map_err(|e| wrap(i, e))?)
            });
        }
    }
    Ok(PreparedCell {
        cell_id: cell.cell_id.clone(),
        nominal_capacity: cell.nominal_capacity,
        cycle_index: cell.cycles.iter().map(|c| c.cycle_index).collect(),
        soh: cell.cycles.iter().map(|c| c.soh).collect(),
        bounds,
        windows,
        single,
        paired,
    })
}

/// Windows for every cell under `spec`, plus network inputs when any CNN
/// estimator is configured.
pub fn prepare(
    config: &ExperimentConfig,
    cells: &[CellRecord],
    spec: &WindowSpec,
) -> Result<Vec<PreparedCell>, PipelineError> {
    let s = window_seed(config, spec);
    cells.par_iter().map(|c| prepare_cell(config, c, spec, s)).collect()
}

/// IC feature of every window, `None` where no qualifying minimum exists.
pub fn compute_ic_features(
    config: &ExperimentConfig,
    prep: &[PreparedCell],
) -> Result<Vec<Vec<Option<IcFeature>>>, PipelineError> {
    prep.par_iter()
        .map(|cell| {
            cell.windows
                .par_iter()
                .map(|w| {
                    config.ica.features(w).map_err(|source| PipelineError::Ica {
                        cell: cell.cell_id.clone(),
                        cycle: w.source_cycle,
                        source,
                    })
                })
                .collect()
        })
        .collect()
}

/// Models trained on one split.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub soh_cnn: Option<CnnEstimator>,
    pub dsoh_cnn: Option<CnnEstimator>,
    pub rf_cnn: Option<ForestModel>,
    pub rf_ica: Option<ForestModel>,
    pub training: Vec<TrainingSummary>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    cells: HashMap<&'a str, (usize, &'a PreparedCell)>,
    ica: Option<&'a [Vec<Option<IcFeature>>]>,
    fold: usize,
}

impl<'a> Context<'a> {
    fn new(
        config: &'a ExperimentConfig,
        prep: &'a [PreparedCell],
        ica: Option<&'a [Vec<Option<IcFeature>>]>,
        fold: usize,
    ) -> Self {
        let cells = prep.iter().enumerate().map(|(i, c)| (c.cell_id.as_str(), (i, c))).collect();
        Context { config, cells, ica, fold }
    }

    fn cell(&self, id: &str) -> &'a PreparedCell {
        self.cells[id].1
    }

    fn features(&self, id: &str) -> &'a [Option<IcFeature>] {
        &self.ica.expect("features computed for RF_ICA")[self.cells[id].0]
    }

    fn model_err(&self, estimator: Estimator, cell: Option<&str>) -> impl FnOnce(ModelError) -> PipelineError {
        let fold = self.fold;
        let cell = cell.map(str::to_string);
        move |source| PipelineError::Model {
            fold,
            estimator,
            cell,
            source,
        }
    }

    fn train_config(&self, e: Estimator) -> TrainConfig {
        let base = self.config.train;
        TrainConfig {
            seed: seed::derive(
                seed::derive_named(self.config.seed(), "shuffle"),
                &[estimator_code(e), self.fold as u64, base.seed],
            ),
            ..base
        }
    }

    fn init_seed(&self, e: Estimator) -> u64 {
        seed::derive(seed::derive_named(self.config.seed(), "init"), &[estimator_code(e), self.fold as u64])
    }

    fn forest_config(&self, e: Estimator) -> ForestConfig {
        let base = self.config.forest;
        ForestConfig {
            seed: seed::derive(
                seed::derive_named(self.config.seed(), "bootstrap"),
                &[estimator_code(e), self.fold as u64, base.seed],
            ),
            ..base
        }
    }

    fn direct_samples(&self, ids: &[String]) -> Vec<(ModelInput, f64)> {
        ids.iter()
            .flat_map(|id| {
                let c = self.cell(id);
                c.single.iter().cloned().zip(c.soh.iter().copied())
            })
            .collect()
    }

    fn increment_samples(&self, ids: &[String]) -> Vec<(ModelInput, f64)> {
        ids.iter()
            .flat_map(|id| {
                let c = self.cell(id);
                (1..c.soh.len()).map(move |t| (c.paired[t].clone().unwrap(), c.soh[t] - c.soh[t - 1]))
            })
            .collect()
    }

    fn train_cnn(
        &self,
        e: Estimator,
        split: &DatasetSplit,
        out: &mut Vec<TrainingSummary>,
    ) -> Result<CnnEstimator, PipelineError> {
        let (train, val, model) = match e {
            Estimator::SohCnn => (
                self.direct_samples(&split.train_cells),
                self.direct_samples(&split.validation_cells),
                build_soh_cnn(self.config.input_length, self.init_seed(e)),
            ),
            _ => (
                self.increment_samples(&split.train_cells),
                self.increment_samples(&split.validation_cells),
                build_dsoh_cnn(self.config.input_length, self.init_seed(e)),
            ),
        };
        let model = model.map_err(self.model_err(e, None))?;
        let nominal = self.cell(&split.train_cells[0]).nominal_capacity;
        let started = Instant::now();
        let (est, report) = train_estimator(e, model, &train, &val, nominal, &self.train_config(e))
            .map_err(self.model_err(e, None))?;
        log::info!(
            "fold {} {e}: {} epochs, best val mse {:.3e} at epoch {} ({:.1} s)",
            self.fold,
            report.history.len(),
            report.best_val_loss,
            report.best_epoch,
            started.elapsed().as_secs_f64()
        );
        out.push(TrainingSummary {
            estimator: e,
            train_samples: train.len(),
            validation_samples: val.len(),
            epochs_run: report.history.len(),
            best_epoch: report.best_epoch,
            best_val_loss: report.best_val_loss,
            stopped_early: report.stopped_early,
        });
        Ok(est)
    }

    /// SOH-CNN estimates and the anchored increment rollout for one cell.
    fn cnn_estimates(
        &self,
        soh: Option<&CnnEstimator>,
        dsoh: Option<&CnnEstimator>,
        id: &str,
    ) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>), PipelineError> {
        let c = self.cell(id);
        let direct = match soh {
            Some(m) => Some(
                m.predict_batch(&c.single.iter().collect::<Vec<_>>())
                    .map_err(self.model_err(Estimator::SohCnn, Some(id)))?,
            ),
            None => None,
        };
        let rolled = match dsoh {
            Some(_) if c.windows.len() == 1 => Some(vec![c.soh[0]]),
            Some(m) => {
                let inputs: Vec<&ModelInput> = c.paired[1..].iter().map(|p| p.as_ref().unwrap()).collect();
                let incs = m.predict_batch(&inputs).map_err(self.model_err(Estimator::DsohCnn, Some(id)))?;
                let lookup = |present: &PartialWindow, _past: &PartialWindow| {
                    let pos = c.cycle_index.binary_search(&present.source_cycle).unwrap();
                    incs[pos - 1]
                };
                let est = rollout_soh(&lookup, &c.windows, c.soh[0])
                    .map_err(self.model_err(Estimator::DsohCnn, Some(id)))?;
                Some(est.into_iter().map(|e| e.value).collect())
            }
            None => None,
        };
        Ok((direct, rolled))
    }
}

fn forest_err(fold: usize, estimator: Estimator) -> impl FnOnce(crate::forest::ForestError) -> PipelineError {
    move |source| PipelineError::Forest {
        fold,
        estimator,
        source,
    }
}

fn fit_with(ctx: &Context, split: &DatasetSplit) -> Result<FittedModels, PipelineError> {
    let config = ctx.config;
    let mut training = Vec::new();
    let need_soh = config.runs(Estimator::SohCnn) || config.runs(Estimator::RfCnn);
    let need_dsoh = config.runs(Estimator::DsohCnn) || config.runs(Estimator::RfCnn);
    let soh_cnn = need_soh
        .then(|| ctx.train_cnn(Estimator::SohCnn, split, &mut training))
        .transpose()?;
    let dsoh_cnn = need_dsoh
        .then(|| ctx.train_cnn(Estimator::DsohCnn, split, &mut training))
        .transpose()?;

    let rf_cnn = if config.runs(Estimator::RfCnn) {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for id in &split.train_cells {
            let (s1, s2) = ctx.cnn_estimates(soh_cnn.as_ref(), dsoh_cnn.as_ref(), id)?;
            let (s1, s2) = (s1.unwrap(), s2.unwrap());
            for t in 0..s1.len() {
                x.push(vec![s1[t], s2[t]]);
                y.push(ctx.cell(id).soh[t]);
            }
        }
        Some(forest_fit(&x, &y, &ctx.forest_config(Estimator::RfCnn)).map_err(forest_err(ctx.fold, Estimator::RfCnn))?)
    } else {
        None
    };

    let rf_ica = if config.runs(Estimator::RfIca) {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for id in &split.train_cells {
            for (f, soh) in ctx.features(id).iter().zip(&ctx.cell(id).soh) {
                if let Some(f) = f {
                    x.push(vec![f.value, f.location]);
                    y.push(*soh);
                }
            }
        }
        if x.is_empty() {
            return Err(PipelineError::AllFeaturesAbsent {
                fold: ctx.fold,
                role: "train",
            });
        }
        Some(forest_fit(&x, &y, &ctx.forest_config(Estimator::RfIca)).map_err(forest_err(ctx.fold, Estimator::RfIca))?)
    } else {
        None
    };

    Ok(FittedModels {
        soh_cnn,
        dsoh_cnn,
        rf_cnn,
        rf_ica,
        training,
    })
}

/// Trains every configured estimator on the train and validation cells of
/// `split`. `fold` only selects seed substreams.
pub fn fit_models(
    config: &ExperimentConfig,
    prep: &[PreparedCell],
    ica: Option<&[Vec<Option<IcFeature>>]>,
    split: &DatasetSplit,
    fold: usize,
) -> Result<FittedModels, PipelineError> {
    fit_with(&Context::new(config, prep, ica, fold), split)
}

struct FoldOutcome {
    summary: FoldSummary,
    rows: Vec<EstimateRow>,
    sensitivity: Vec<NamedSensitivity>,
    seconds: f64,
}

fn evenly_spaced<T: Clone>(items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|i| items[i * items.len() / n].clone()).collect()
}

fn run_fold(ctx: &Context, split: &DatasetSplit) -> Result<FoldOutcome, PipelineError> {
    let started = Instant::now();
    let config = ctx.config;
    let models = fit_with(ctx, split)?;
    let mut rows = Vec::new();
    let mut ica_total = 0;
    let mut ica_skipped = 0;
    let mut push = |estimator, cell: &PreparedCell, t: usize, est: f64| -> Result<(), PipelineError> {
        rows.push(EstimateRow {
            estimator,
            fold: ctx.fold,
            cell_id: cell.cell_id.clone(),
            cycle_index: cell.cycle_index[t],
            soh_true: cell.soh[t],
            soh_est: est,
            error_pct: mae(cell.soh[t], est)?,
            anchor: estimator == Estimator::DsohCnn && t == 0,
        });
        Ok(())
    };

    for id in &split.test_cells {
        let cell = ctx.cell(id);
        let (s1, s2) = ctx.cnn_estimates(models.soh_cnn.as_ref(), models.dsoh_cnn.as_ref(), id)?;
        for t in 0..cell.soh.len() {
            if config.runs(Estimator::SohCnn) {
                push(Estimator::SohCnn, cell, t, s1.as_ref().unwrap()[t])?;
            }
            if config.runs(Estimator::DsohCnn) {
                push(Estimator::DsohCnn, cell, t, s2.as_ref().unwrap()[t])?;
            }
            if let Some(forest) = &models.rf_cnn {
                let x = [s1.as_ref().unwrap()[t], s2.as_ref().unwrap()[t]];
                let est = forest.predict(&x).map_err(forest_err(ctx.fold, Estimator::RfCnn))?;
                push(Estimator::RfCnn, cell, t, est)?;
            }
            if let Some(forest) = &models.rf_ica {
                ica_total += 1;
                match ctx.features(id)[t] {
                    Some(f) => {
                        let est = forest
                            .predict(&[f.value, f.location])
                            .map_err(forest_err(ctx.fold, Estimator::RfIca))?;
                        push(Estimator::RfIca, cell, t, est)?;
                    }
                    None => ica_skipped += 1,
                }
            }
        }
    }
    if models.rf_ica.is_some() && ica_skipped == ica_total {
        return Err(PipelineError::AllFeaturesAbsent {
            fold: ctx.fold,
            role: "test",
        });
    }

    let mut sensitivity = Vec::new();
    if ctx.fold == 0 && config.sensitivity_samples > 0 {
        let test: Vec<&PreparedCell> = split.test_cells.iter().map(|id| ctx.cell(id)).collect();
        if let Some(m) = &models.soh_cnn {
            let inputs: Vec<ModelInput> = test.iter().flat_map(|c| c.single.iter().cloned()).collect();
            let profile = m
                .sensitivity(&evenly_spaced(&inputs, config.sensitivity_samples))
                .map_err(ctx.model_err(Estimator::SohCnn, None))?;
            sensitivity.push(NamedSensitivity::new(Estimator::SohCnn, profile));
        }
        if let Some(m) = &models.dsoh_cnn {
            let inputs: Vec<ModelInput> =
                test.iter().flat_map(|c| c.paired.iter().flatten().cloned()).collect();
            if !inputs.is_empty() {
                let profile = m
                    .sensitivity(&evenly_spaced(&inputs, config.sensitivity_samples))
                    .map_err(ctx.model_err(Estimator::DsohCnn, None))?;
                sensitivity.push(NamedSensitivity::new(Estimator::DsohCnn, profile));
            }
        }
    }

    let summary = FoldSummary {
        fold: ctx.fold,
        train_cells: split.train_cells.clone(),
        validation_cells: split.validation_cells.clone(),
        test_cells: split.test_cells.clone(),
        training: models.training,
        importance_ratio: models.rf_cnn.as_ref().and_then(|f| f.importance_ratio().ok()),
        rf_cnn_importances: models.rf_cnn.as_ref().map(|f| f.feature_importances.clone()),
        rf_ica_test_cycles: models.rf_ica.is_some().then_some(ica_total),
        rf_ica_skipped: models.rf_ica.is_some().then_some(ica_skipped),
    };
    let seconds = started.elapsed().as_secs_f64();
    log::info!("fold {} done in {seconds:.1} s", ctx.fold);
    Ok(FoldOutcome {
        summary,
        rows,
        sensitivity,
        seconds,
    })
}

/// Cell-level k-fold cross-validation of the configured estimators on
/// already loaded cells. Must run inside a thread pool.
fn evaluate_cells(
    config: &ExperimentConfig,
    cells: &[CellRecord],
    condition: Option<&str>,
) -> Result<EvaluationReport, PipelineError> {
    let started = Instant::now();
    let prep = prepare(config, cells, &config.window)?;
    let prepare_seconds = started.elapsed().as_secs_f64();

    let ica_started = Instant::now();
    let ica = if config.runs(Estimator::RfIca) {
        Some(compute_ic_features(config, &prep)?)
    } else {
        None
    };
    let ica_seconds = ica_started.elapsed().as_secs_f64();

    let ids: Vec<String> = cells.iter().map(|c| c.cell_id.clone()).collect();
    let folds = make_cv_folds(&ids, config.k_folds, seed::derive_named(config.seed(), "folds"))?;
    let outcomes: Vec<FoldOutcome> = folds
        .par_iter()
        .enumerate()
        .map(|(k, split)| run_fold(&Context::new(config, &prep, ica.as_deref(), k), split))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut fold_summaries = Vec::new();
    let mut sensitivity = Vec::new();
    let mut fold_seconds = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        fold_summaries.push(o.summary);
        sensitivity.extend(o.sensitivity);
        fold_seconds.push(o.seconds);
    }
    rows.sort_by(|a, b| {
        (estimator_code(a.estimator), &a.cell_id, a.cycle_index).cmp(&(
            estimator_code(b.estimator),
            &b.cell_id,
            b.cycle_index,
        ))
    });

    let mut aggregate = Vec::new();
    for &e in Estimator::ALL.iter().filter(|e| config.runs(**e)) {
        let errors: Vec<f64> = rows.iter().filter(|r| r.estimator == e).map(|r| r.error_pct).collect();
        let skipped = if e == Estimator::RfIca {
            fold_summaries.iter().filter_map(|f| f.rf_ica_skipped).sum()
        } else {
            0
        };
        aggregate.push(EstimatorSummary {
            estimator: e,
            mae: aggregate_mae(errors.iter().copied()).unwrap_or(f64::NAN),
            cycles: errors.len(),
            skipped,
        });
    }
    for a in &aggregate {
        log::info!("{}: MAE {:.4}% over {} cycles", a.estimator, a.mae, a.cycles);
    }

    Ok(EvaluationReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        condition: condition.map(str::to_string),
        master_seed: config.seed(),
        k_folds: config.k_folds,
        input_length: config.input_length,
        window: config.window,
        estimators: Estimator::ALL.iter().copied().filter(|e| config.runs(*e)).collect(),
        mae_pooling: MAE_POOLING.to_string(),
        aggregate,
        folds: fold_summaries,
        rows,
        sensitivity,
        timings: Timings {
            prepare_seconds,
            ica_seconds,
            fold_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Cross-validated evaluation of `config.estimators` under `config.window`.
pub fn run_evaluation(config: &ExperimentConfig, opts: &RunOptions) -> Result<EvaluationReport, PipelineError> {
    config.validate()?;
    with_pool(opts, || {
        let cells = load_cells(config)?;
        evaluate_cells(config, &cells, None)
    })?
}

/// Evaluation with the forest fusion of both CNNs included.
pub fn run_rf_cnn(config: &ExperimentConfig, opts: &RunOptions) -> Result<EvaluationReport, PipelineError> {
    let mut config = config.clone();
    if !config.runs(Estimator::RfCnn) {
        config.estimators.push(Estimator::RfCnn);
    }
    run_evaluation(&config, opts)
}

/// Evaluation of the IC-feature forest alone.
pub fn run_rf_ica(config: &ExperimentConfig, opts: &RunOptions) -> Result<EvaluationReport, PipelineError> {
    let config = ExperimentConfig {
        estimators: vec![Estimator::RfIca],
        ..config.clone()
    };
    run_evaluation(&config, opts)
}

/// Runs the configured estimators once per condition on the same cells and
/// folds. A failing condition is recorded and the rest still run.
pub fn run_condition_sweep(
    base: &ExperimentConfig,
    conditions: &[Condition],
    opts: &RunOptions,
) -> Result<SweepReport, PipelineError> {
    base.validate()?;
    if conditions.is_empty() {
        return Err(PipelineError::InvalidConfig("sweep needs at least one condition".into()));
    }
    for c in conditions {
        c.window
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(format!("condition {}: {e}", c.name)))?;
    }
    with_pool(opts, || {
        let cells = load_cells(base)?;
        let mut outcomes = Vec::new();
        for c in conditions {
            log::info!("condition {}", c.name);
            let config = ExperimentConfig {
                window: c.window,
                ..base.clone()
            };
            let result = evaluate_cells(&config, &cells, Some(&c.name));
            if let Err(e) = &result {
                log::error!("condition {} failed: {e}", c.name);
            }
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            outcomes.push(ConditionOutcome {
                name: c.name.clone(),
                window: c.window,
                report,
                error,
            });
        }
        Ok(SweepReport {
            master_seed: base.seed(),
            estimators: Estimator::ALL.iter().copied().filter(|e| base.runs(*e)).collect(),
            conditions: outcomes,
        })
    })?
}

/// The 60/20/20 cell split used when training outside cross-validation.
pub fn holdout_split(config: &ExperimentConfig, cells: &[CellRecord]) -> Result<DatasetSplit, PipelineError> {
    let ids: Vec<String> = cells.iter().map(|c| c.cell_id.clone()).collect();
    Ok(split_by_cell(&ids, (0.6, 0.2, 0.2), seed::derive_named(config.seed(), "split"))?)
}
