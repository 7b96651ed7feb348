//! Cycle-data ingestion, synthetic datasets and cell-level splits.
//!
//! CSV schema (header mandatory, one sample per row):
//!
//! ```text
//! cell_id,nominal_capacity_ah,cycle_index,cell_capacity_ah,voltage_v,capacity_ah[,soh]
//! ```
//!
//! Rows of one cycle must be contiguous and ordered by capacity. When the
//! optional `soh` column is present it is cross-checked against
//! `cell_capacity_ah / nominal_capacity_ah`.

mod synthetic;

pub use synthetic::{
    cell_id, cell_traits, fade_progress, generate_synthetic, soh_at, CellTraits, FadeShape,
    Plateau, SyntheticSpec, VoltageModel,
};

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::types::{
    CellRecord, CycleRecord, DischargeCurve, VOLTAGE_SANITY_MAX, VOLTAGE_SANITY_MIN,
};

pub const CSV_HEADER: [&str; 6] = [
    "cell_id",
    "nominal_capacity_ah",
    "cycle_index",
    "cell_capacity_ah",
    "voltage_v",
    "capacity_ah",
];

/// Maximum allowed gap between a provided and a recomputed SOH.
pub const SOH_CROSS_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error(
        "line {line}: cell {cell_id} cycle {cycle_index}: provided soh {provided} differs from \
         cell_capacity / nominal_capacity = {recomputed}"
    )]
    InconsistentCapacity {
        line: u64,
        cell_id: String,
        cycle_index: u32,
        provided: f64,
        recomputed: f64,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    InvalidFractions((f64, f64, f64)),
    #[error("{cells} cells cannot fill {needed} non-empty partitions")]
    TooFewCells { cells: usize, needed: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct PendingCycle {
    cycle_index: u32,
    cell_capacity: f64,
    first_line: u64,
    voltage: Vec<f64>,
    capacity: Vec<f64>,
}

struct PendingCell {
    cell_id: String,
    nominal_capacity: f64,
    cycles: Vec<CycleRecord>,
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64, DataError> {
    let v: f64 = field.trim().parse().map_err(|_| DataError::MalformedRow {
        line,
        reason: format!("{name} '{field}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::MalformedRow {
            line,
            reason: format!("{name} '{field}' is not finite"),
        });
    }
    Ok(v)
}

/// Reads one CSV file into cell records, one per distinct `cell_id`, in
/// order of first appearance.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<CellRecord>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DataError::EmptyFile(path.to_path_buf())),
        Err(e) => {
            return Err(DataError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })
        }
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_soh = names.len() == 7 && names[6] == "soh";
    if names.len() < 6 || names[..6] != CSV_HEADER || (names.len() > 6 && !has_soh) {
        return Err(DataError::MalformedRow {
            line: 1,
            reason: format!("header must be '{}[,soh]', got '{}'", CSV_HEADER.join(","), names.join(",")),
        });
    }

    let mut cells: Vec<PendingCell> = Vec::new();
    let mut cell_pos: HashMap<String, usize> = HashMap::new();
    let mut seen_cycles: HashSet<(String, u32)> = HashSet::new();
    let mut current: Option<(usize, PendingCycle)> = None;
    let mut rows = 0usize;

    fn finish(cells: &mut [PendingCell], slot: usize, cyc: PendingCycle) -> Result<(), DataError> {
        if cyc.voltage.len() < 2 {
            return Err(DataError::MalformedRow {
                line: cyc.first_line,
                reason: format!("cycle {} has fewer than 2 samples", cyc.cycle_index),
            });
        }
        let cell = &mut cells[slot];
        cell.cycles.push(CycleRecord {
            cycle_index: cyc.cycle_index,
            curve: DischargeCurve::new(cyc.voltage, cyc.capacity),
            cell_capacity: cyc.cell_capacity,
            soh: cyc.cell_capacity / cell.nominal_capacity,
        });
        Ok(())
    }

    for result in reader.records() {
        let record = result.map_err(|e| DataError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let expected = if has_soh { 7 } else { 6 };
        if record.len() != expected {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        rows += 1;
        let cell_id = record[0].trim().to_string();
        if cell_id.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty cell_id".into(),
            });
        }
        let nominal = parse_f64(&record[1], "nominal_capacity_ah", line)?;
        let cycle_index: u32 = record[2].trim().parse().map_err(|_| DataError::MalformedRow {
            line,
            reason: format!("cycle_index '{}' is not a non-negative integer", &record[2]),
        })?;
        let cell_capacity = parse_f64(&record[3], "cell_capacity_ah", line)?;
        let voltage = parse_f64(&record[4], "voltage_v", line)?;
        let capacity = parse_f64(&record[5], "capacity_ah", line)?;

        if !(nominal > 0.0) {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("nominal_capacity_ah {nominal} must be > 0"),
            });
        }
        if !(cell_capacity > 0.0) {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("cell_capacity_ah {cell_capacity} must be > 0"),
            });
        }
        if !(VOLTAGE_SANITY_MIN..=VOLTAGE_SANITY_MAX).contains(&voltage) {
            return Err(DataError::MalformedRow {
                line,
                reason: format!(
                    "voltage {voltage} outside sanity bound [{VOLTAGE_SANITY_MIN}, {VOLTAGE_SANITY_MAX}] V"
                ),
            });
        }
        if has_soh {
            let provided = parse_f64(&record[6], "soh", line)?;
            let recomputed = cell_capacity / nominal;
            if (provided - recomputed).abs() > SOH_CROSS_CHECK_TOL {
                return Err(DataError::InconsistentCapacity {
                    line,
                    cell_id,
                    cycle_index,
                    provided,
                    recomputed,
                });
            }
        }

        let slot = match cell_pos.get(&cell_id) {
            Some(&s) => {
                if cells[s].nominal_capacity != nominal {
                    return Err(DataError::MalformedRow {
                        line,
                        reason: format!(
                            "nominal capacity {nominal} conflicts with {} for cell {cell_id}",
                            cells[s].nominal_capacity
                        ),
                    });
                }
                s
            }
            None => {
                cells.push(PendingCell {
                    cell_id: cell_id.clone(),
                    nominal_capacity: nominal,
                    cycles: Vec::new(),
                });
                cell_pos.insert(cell_id.clone(), cells.len() - 1);
                cells.len() - 1
            }
        };

        let same_cycle = matches!(&current, Some((s, c)) if *s == slot && c.cycle_index == cycle_index);
        if !same_cycle {
            if let Some((s, c)) = current.take() {
                finish(&mut cells, s, c)?;
            }
            if !seen_cycles.insert((cell_id.clone(), cycle_index)) {
                return Err(DataError::MalformedRow {
                    line,
                    reason: format!("rows for cell {cell_id} cycle {cycle_index} are not contiguous"),
                });
            }
            current = Some((
                slot,
                PendingCycle {
                    cycle_index,
                    cell_capacity,
                    first_line: line,
                    voltage: Vec::new(),
                    capacity: Vec::new(),
                },
            ));
        }
        let (_, cyc) = current.as_mut().expect("current cycle set above");
        if cyc.cell_capacity != cell_capacity {
            return Err(DataError::MalformedRow {
                line,
                reason: format!(
                    "cell_capacity_ah {cell_capacity} conflicts with {} within cycle {cycle_index}",
                    cyc.cell_capacity
                ),
            });
        }
        if let Some(&prev) = cyc.capacity.last() {
            if capacity < prev {
                return Err(DataError::MalformedRow {
                    line,
                    reason: format!("capacity {capacity} decreases from {prev} within cycle {cycle_index}"),
                });
            }
        }
        cyc.voltage.push(voltage);
        cyc.capacity.push(capacity);
    }
    if let Some((s, c)) = current.take() {
        finish(&mut cells, s, c)?;
    }
    if rows == 0 {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }

    Ok(cells
        .into_iter()
        .map(|mut c| {
            c.cycles.sort_by_key(|cy| cy.cycle_index);
            CellRecord {
                cell_id: c.cell_id,
                nominal_capacity: c.nominal_capacity,
                cycles: c.cycles,
            }
        })
        .collect())
}

/// Lists CSV files making up one dataset; relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
}

pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Vec<CellRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out: Vec<CellRecord> = Vec::new();
    let mut ids = HashSet::new();
    for file in &manifest.files {
        let full = if file.is_absolute() { file.clone() } else { dir.join(file) };
        for cell in ingest_csv(&full)? {
            if !ids.insert(cell.cell_id.clone()) {
                return Err(DataError::Manifest {
                    path: path.to_path_buf(),
                    reason: format!("cell {} appears in more than one file", cell.cell_id),
                });
            }
            out.push(cell);
        }
    }
    if out.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

/// Writes cells in the canonical schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(cells: &[CellRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{}", CSV_HEADER.join(","))?;
        for cell in cells {
            for cyc in &cell.cycles {
                for (v, q) in cyc.curve.voltage.iter().zip(&cyc.curve.capacity) {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        cell.cell_id, cell.nominal_capacity, cyc.cycle_index, cyc.cell_capacity, v, q
                    )?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_cells: Vec<String>,
    pub validation_cells: Vec<String>,
    pub test_cells: Vec<String>,
}

impl DatasetSplit {
    pub fn role_of(&self, cell_id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|c| c == cell_id);
        if has(&self.train_cells) {
            Some("train")
        } else if has(&self.validation_cells) {
            Some("validation")
        } else if has(&self.test_cells) {
            Some("test")
        } else {
            None
        }
    }
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier
/// partition. Every partition with a positive fraction receives at least one
/// item when `n` allows it.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    for i in 0..sizes.len() {
        if fractions[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..sizes.len())
                .filter(|&j| sizes[j] > 1)
                .max_by_key(|&j| (sizes[j], std::cmp::Reverse(j)));
            if let Some(j) = donor {
                sizes[j] -= 1;
                sizes[i] += 1;
            }
        }
    }
    sizes
}

fn shuffled_ids(cell_ids: &[String], seed_value: u64) -> Vec<String> {
    let mut ids: Vec<String> = cell_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut seed::rng(seed_value));
    ids
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

/// Assigns whole cells to train / validation / test partitions.
pub fn split_by_cell(
    cell_ids: &[String],
    fractions: (f64, f64, f64),
    seed_value: u64,
) -> Result<DatasetSplit, DataError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidFractions(fractions));
    }
    let ids = shuffled_ids(cell_ids, seed_value);
    let needed = f.iter().filter(|x| **x > 0.0).count();
    if ids.len() < needed {
        return Err(DataError::TooFewCells {
            cells: ids.len(),
            needed,
        });
    }
    let sizes = apportion(ids.len(), &f);
    let (train, rest) = ids.split_at(sizes[0]);
    let (val, test) = rest.split_at(sizes[1]);
    Ok(DatasetSplit {
        train_cells: sorted(train.to_vec()),
        validation_cells: sorted(val.to_vec()),
        test_cells: sorted(test.to_vec()),
    })
}

/// Share of the non-test cells used for validation in each fold.
pub const CV_VALIDATION_SHARE: f64 = 0.25;

/// k-fold split at cell granularity: every cell is tested exactly once and
/// the remaining cells of each fold are divided 75/25 into train and
/// validation.
pub fn make_cv_folds(cell_ids: &[String], k: usize, seed_value: u64) -> Result<Vec<DatasetSplit>, DataError> {
    let ids = shuffled_ids(cell_ids, seed_value);
    let n = ids.len();
    if k < 2 || n < k {
        return Err(DataError::TooFewCells {
            cells: n,
            needed: k.max(2),
        });
    }
    let mut starts = Vec::with_capacity(k + 1);
    let mut acc = 0;
    for fold in 0..k {
        starts.push(acc);
        acc += n / k + usize::from(fold < n % k);
    }
    starts.push(n);

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (lo, hi) = (starts[fold], starts[fold + 1]);
        let test = ids[lo..hi].to_vec();
        // rotate so each fold draws validation cells from a different place
        let rest: Vec<String> = ids[hi..].iter().chain(ids[..lo].iter()).cloned().collect();
        let sizes = apportion(rest.len(), &[1.0 - CV_VALIDATION_SHARE, CV_VALIDATION_SHARE]);
        let n_val = sizes[1];
        folds.push(DatasetSplit {
            train_cells: sorted(rest[n_val..].to_vec()),
            validation_cells: sorted(rest[..n_val].to_vec()),
            test_cells: sorted(test),
        });
    }
    Ok(folds)
}
