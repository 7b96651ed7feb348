//! Command-line front end. Diagnostics go to standard error and results
//! only to files. Exit status: 0 success, 1 usage or validation error,
//! 2 failure during computation.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

use crate::dataio::{self, DataError};
use crate::forest::ForestError;
use crate::models::{CnnEstimator, ModelError};
use crate::pipeline::{
    self, compute_ic_features, fit_models, holdout_split, load_cells, prepare, sample_cell_windows, window_seed,
    write_evaluation, write_sweep, ExperimentConfig, PipelineError, RunOptions, DEFAULT_MASTER_SEED,
};
use crate::types::{validate_cell, Estimator};

pub const SEED_ENV: &str = "SOHFORGE_SEED";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("override {key}: {message}")]
    BadOverride { key: String, message: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("{SEED_ENV}='{0}' is not an unsigned integer")]
    BadSeedEnv(String),
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("forest: {0}")]
    Forest(#[from] ForestError),
    #[error("{0} validation problem(s) found")]
    InvalidData(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. }
            | CliError::BadOverride { .. }
            | CliError::UnknownKey(_)
            | CliError::BadSeedEnv(_)
            | CliError::Usage(_)
            | CliError::ConfigRead { .. }
            | CliError::InvalidData(_) => 1,
            CliError::Pipeline(e) if e.is_validation() => 1,
            CliError::Data(e) if !matches!(e, DataError::Io { .. }) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sohforge", version, about = "Battery SOH estimation from partial discharge curves")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON)
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set window.q_max_dist.low=0.05`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory, overriding `output_dir`
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Master seed, overriding the config and the environment
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum concurrent work units (0 = all cores)
    #[arg(long, default_value_t = 0, global = true)]
    pub jobs: usize,
    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or convert the configured dataset into `cells.csv`
    Synth,
    /// Sample one partial window per cycle into `windows.csv`
    Windows,
    /// IC feature of every window into `ic_features.csv`
    Ica,
    /// Train all configured estimators on a 60/20/20 split and save them
    Train,
    /// Cross-validated evaluation
    Evaluate,
    /// Evaluation under every configured window condition
    Sweep,
    /// Input sensitivity of a saved CNN estimator
    Sensitivity {
        /// Estimator checkpoint written by `train`
        #[arg(long)]
        model: PathBuf,
    },
    /// Check a config, or a dataset CSV without a config
    Validate {
        /// Dataset CSV to check
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn json_location(e: &serde_json::Error, path: &str) -> CliError {
    CliError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let slot = match node {
            Value::Object(map) => map.get_mut(*part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
            _ => None,
        };
        let Some(slot) = slot else {
            return Err(CliError::UnknownKey(parts[..=i].join(".")));
        };
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(CliError::UnknownKey(key.to_string()))
}

/// Parses the config (or defaults when `path` is `None`), applies
/// `KEY=VALUE` overrides in order and fills in the master seed from
/// [`SEED_ENV`] when neither the file nor an override set one.
pub fn resolve_config(
    path: Option<&Path>,
    overrides: &[String],
    seed_env: Option<&str>,
) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::ConfigRead {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| json_location(&e, &p.display().to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    let mut tree = serde_json::to_value(&config).expect("config serializes");
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            return Err(CliError::BadOverride {
                key: o.clone(),
                message: "expected KEY=VALUE".into(),
            });
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut tree, key.trim(), value)?;
    }
    let mut config: ExperimentConfig = serde_json::from_value(tree).map_err(|e| CliError::BadOverride {
        key: overrides.join(" "),
        message: e.to_string(),
    })?;
    if config.master_seed.is_none() {
        config.master_seed = Some(match seed_env {
            Some(s) => s.trim().parse().map_err(|_| CliError::BadSeedEnv(s.to_string()))?,
            None => DEFAULT_MASTER_SEED,
        });
    }
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn dump_config(config: &ExperimentConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    write_text(&config.output_dir.join(RESOLVED_CONFIG_FILE), &text)
}

fn csv_file(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let mut body = String::from(header);
    body.push('\n');
    for r in rows {
        body.push_str(&r);
        body.push('\n');
    }
    write_text(path, &body)
}

fn init_logging(common: &CommonArgs) {
    let level = if common.quiet {
        log::LevelFilter::Error
    } else {
        match common.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp_secs()
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn validate_data(path: &Path) -> Result<(), CliError> {
    let cells = dataio::ingest_csv(path)?;
    let problems: Vec<_> = cells.iter().flat_map(validate_cell).collect();
    for p in &problems {
        eprintln!("{p}");
    }
    if !problems.is_empty() {
        return Err(CliError::InvalidData(problems.len()));
    }
    let cycles: usize = cells.iter().map(|c| c.cycles.len()).sum();
    log::info!("{}: {} cells, {cycles} cycles, no problems", path.display(), cells.len());
    Ok(())
}

/// Executes a parsed command line.
pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    if let Command::Validate { data: Some(path) } = &cli.command {
        return validate_data(path);
    }
    let mut overrides = common.overrides.clone();
    if let Some(o) = &common.output {
        overrides.push(format!("output_dir={}", Value::String(o.display().to_string())));
    }
    if let Some(s) = common.seed {
        overrides.push(format!("master_seed={s}"));
    }
    if common.config.is_none() && !matches!(cli.command, Command::Validate { .. }) {
        return Err(CliError::Usage("--config is required for this subcommand".into()));
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let config = resolve_config(common.config.as_deref(), &overrides, env_seed.as_deref())?;
    config.validate()?;
    if matches!(cli.command, Command::Validate { .. }) {
        log::info!("config is valid");
        return Ok(());
    }
    dump_config(&config)?;
    let opts = RunOptions { jobs: common.jobs };
    let out = config.output_dir.clone();

    match &cli.command {
        Command::Synth => {
            let cells = load_cells(&config)?;
            let path = out.join("cells.csv");
            dataio::write_csv(&cells, &path)?;
            log::info!("wrote {} cells to {}", cells.len(), path.display());
        }
        Command::Windows => {
            let cells = load_cells(&config)?;
            let seed = window_seed(&config, &config.window);
            let mut rows = Vec::new();
            for cell in &cells {
                let (bounds, windows) = sample_cell_windows(cell, &config.window, seed)?;
                for ((c, b), w) in cell.cycles.iter().zip(&bounds).zip(&windows) {
                    rows.push(format!(
                        "{},{},{},{},{},{},{},{}",
                        cell.cell_id,
                        c.cycle_index,
                        c.soh,
                        b.dod_initial,
                        b.dod_final,
                        b.q_max,
                        b.clipped,
                        w.curve.len()
                    ));
                }
            }
            csv_file(
                &out.join("windows.csv"),
                "cell_id,cycle_index,soh,dod_initial,dod_final,q_max,clipped,samples",
                rows,
            )?;
        }
        Command::Ica => {
            let cells = load_cells(&config)?;
            let icfg = ExperimentConfig {
                estimators: vec![Estimator::RfIca],
                ..config.clone()
            };
            let prep = prepare(&icfg, &cells, &config.window)?;
            let feats = compute_ic_features(&icfg, &prep)?;
            let mut rows = Vec::new();
            let mut absent = 0;
            for (c, fs) in prep.iter().zip(&feats) {
                for (t, f) in fs.iter().enumerate() {
                    let (v, l) = match f {
                        Some(f) => (f.value.to_string(), f.location.to_string()),
                        None => {
                            absent += 1;
                            (String::new(), String::new())
                        }
                    };
                    rows.push(format!("{},{},{},{v},{l}", c.cell_id, c.cycle_index[t], c.soh[t]));
                }
            }
            log::info!("{absent} of {} windows have no IC feature", rows.len());
            csv_file(&out.join("ic_features.csv"), "cell_id,cycle_index,soh,ic_value,ic_location", rows)?;
        }
        Command::Train => {
            let cells = load_cells(&config)?;
            let prep = prepare(&config, &cells, &config.window)?;
            let feats = if config.runs(Estimator::RfIca) {
                Some(compute_ic_features(&config, &prep)?)
            } else {
                None
            };
            let split = holdout_split(&config, &cells)?;
            let models = fit_models(&config, &prep, feats.as_deref(), &split, 0)?;
            let dir = out.join("models");
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            if let Some(m) = &models.soh_cnn {
                m.save(dir.join("soh_cnn.json"))?;
            }
            if let Some(m) = &models.dsoh_cnn {
                m.save(dir.join("dsoh_cnn.json"))?;
            }
            if let Some(f) = &models.rf_cnn {
                f.save(dir.join("rf_cnn.json"))?;
            }
            if let Some(f) = &models.rf_ica {
                f.save(dir.join("rf_ica.json"))?;
            }
            let summary = serde_json::json!({ "split": split, "training": models.training });
            write_text(&dir.join("training.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
        }
        Command::Evaluate => {
            let report = pipeline::run_evaluation(&config, &opts)?;
            write_evaluation(&out, &report)?;
        }
        Command::Sweep => {
            let sweep = pipeline::run_condition_sweep(&config, &config.conditions, &opts)?;
            write_sweep(&out, &sweep)?;
            if let Some(failed) = sweep.conditions.iter().find(|c| c.error.is_some()) {
                log::error!("condition {} failed", failed.name);
            }
        }
        Command::Sensitivity { model } => {
            let est = CnnEstimator::load(model)?;
            let cells = load_cells(&config)?;
            let cfg = ExperimentConfig {
                input_length: est.input_length,
                estimators: vec![est.kind],
                ..config.clone()
            };
            let prep = prepare(&cfg, &cells, &config.window)?;
            let inputs: Vec<_> = if est.kind == Estimator::SohCnn {
                prep.iter().flat_map(|c| c.single.iter().cloned()).collect()
            } else {
                prep.iter().flat_map(|c| c.paired.iter().flatten().cloned()).collect()
            };
            let n = config.sensitivity_samples.max(1).min(inputs.len());
            let picked: Vec<_> = (0..n).map(|i| inputs[i * inputs.len() / n].clone()).collect();
            let profile = est.sensitivity(&picked)?;
            let path = out.join("sensitivity").join(format!("{}.csv", est.kind));
            let mut buf = Vec::new();
            profile.write_csv(&mut buf).expect("in-memory write");
            write_text(&path, std::str::from_utf8(&buf).unwrap())?;
            for (c, name) in profile.channels.iter().enumerate() {
                log::info!("{name}: first/second half sensitivity {:.3}", profile.half_ratio(c));
            }
        }
        Command::Validate { .. } => unreachable!(),
    }
    Ok(())
}

/// Parses `args` and runs, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.common);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
