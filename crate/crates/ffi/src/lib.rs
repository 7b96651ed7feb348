//! C ABI over sohforge.
//!
//! Every fallible function returns a [`SohStatus`] and writes its result
//! through an out pointer. On failure the message is available from
//! [`soh_last_error`] on the same thread until the next failing call.
//! Objects are opaque handles released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sohforge::dataio::{self, SyntheticSpec};
use sohforge::forest::ForestModel;
use sohforge::models::CnnEstimator;
use sohforge::partial::to_model_input;
use sohforge::pipeline::{self, ExperimentConfig, RunOptions};
use sohforge::types::{CellRecord, DischargeCurve, Estimator, PartialWindow};

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SohStatus {
    SOH_OK = 0,
    SOH_ERR_NULL_POINTER = 1,
    SOH_ERR_INVALID_ARGUMENT = 2,
    SOH_ERR_IO = 3,
    SOH_ERR_PARSE = 4,
    SOH_ERR_COMPUTE = 5,
    SOH_ERR_PANIC = 6,
}

use SohStatus::*;

/// Loaded or generated cycle data.
pub struct SohDataset {
    cells: Vec<CellRecord>,
}

/// A trained CNN estimator.
pub struct SohCnn {
    inner: CnnEstimator,
}

/// A trained random forest.
pub struct SohForest {
    inner: ForestModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).unwrap()));
}

struct Failure(SohStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<T>(status: SohStatus, msg: impl Into<String>) -> Outcome<T> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> SohStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SOH_OK,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SOH_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return fail(SOH_ERR_NULL_POINTER, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SOH_ERR_INVALID_ARGUMENT, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Outcome<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SOH_ERR_NULL_POINTER, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Outcome<&'a T> {
    p.as_ref().ok_or_else(|| Failure(SOH_ERR_NULL_POINTER, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Outcome<()> {
    if out.is_null() {
        return fail(SOH_ERR_NULL_POINTER, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

fn data_status(e: &dataio::DataError) -> SohStatus {
    match e {
        dataio::DataError::Io { .. } => SOH_ERR_IO,
        dataio::DataError::InvalidSpec(_) => SOH_ERR_INVALID_ARGUMENT,
        _ => SOH_ERR_PARSE,
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn soh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn soh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Relative error `|t - e| / t * 100`, in percent.
#[no_mangle]
pub unsafe extern "C" fn soh_mae(soh_true: f64, soh_est: f64, out: *mut f64) -> SohStatus {
    guard(|| {
        let v = pipeline::mae(soh_true, soh_est).map_err(|e| Failure(SOH_ERR_INVALID_ARGUMENT, e.to_string()))?;
        write_out(out, v)
    })
}

/// Generates a synthetic dataset. `spec_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn soh_dataset_synthetic(spec_json: *const c_char, out: *mut *mut SohDataset) -> SohStatus {
    guard(|| {
        let spec: SyntheticSpec = if spec_json.is_null() {
            SyntheticSpec::default()
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?)
                .map_err(|e| Failure(SOH_ERR_PARSE, e.to_string()))?
        };
        let cells = dataio::generate_synthetic(&spec).map_err(|e| Failure(data_status(&e), e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SohDataset { cells })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_dataset_load_csv(path: *const c_char, out: *mut *mut SohDataset) -> SohStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let cells = dataio::ingest_csv(path).map_err(|e| Failure(data_status(&e), e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SohDataset { cells })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_dataset_write_csv(dataset: *const SohDataset, path: *const c_char) -> SohStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let path = str_arg(path, "path")?;
        dataio::write_csv(&d.cells, path).map_err(|e| Failure(data_status(&e), e.to_string()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_dataset_cell_count(dataset: *const SohDataset, out: *mut usize) -> SohStatus {
    guard(|| write_out(out, handle(dataset, "dataset")?.cells.len()))
}

unsafe fn cell_at<'a>(dataset: *const SohDataset, cell: usize) -> Outcome<&'a CellRecord> {
    let d = handle(dataset, "dataset")?;
    d.cells.get(cell).ok_or_else(|| {
        Failure(
            SOH_ERR_INVALID_ARGUMENT,
            format!("cell {cell} out of range ({} cells)", d.cells.len()),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_dataset_cycle_count(dataset: *const SohDataset, cell: usize, out: *mut usize) -> SohStatus {
    guard(|| write_out(out, cell_at(dataset, cell)?.cycles.len()))
}

/// True SOH of the `cycle`-th stored cycle of `cell` (positions, not
/// cycle indices).
#[no_mangle]
pub unsafe extern "C" fn soh_dataset_soh(
    dataset: *const SohDataset,
    cell: usize,
    cycle: usize,
    out: *mut f64,
) -> SohStatus {
    guard(|| {
        let c = cell_at(dataset, cell)?;
        let cy = c.cycles.get(cycle).ok_or_else(|| {
            Failure(
                SOH_ERR_INVALID_ARGUMENT,
                format!("cycle {cycle} out of range ({} cycles)", c.cycles.len()),
            )
        })?;
        write_out(out, cy.soh)
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_dataset_free(dataset: *mut SohDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads an estimator checkpoint written by `sohforge train`.
#[no_mangle]
pub unsafe extern "C" fn soh_cnn_load(path: *const c_char, out: *mut *mut SohCnn) -> SohStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = CnnEstimator::load(path).map_err(|e| Failure(SOH_ERR_IO, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SohCnn { inner })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_cnn_input_length(cnn: *const SohCnn, out: *mut usize) -> SohStatus {
    guard(|| write_out(out, handle(cnn, "cnn")?.inner.input_length))
}

/// 2 for the direct SOH network, 4 for the increment network.
#[no_mangle]
pub unsafe extern "C" fn soh_cnn_channels(cnn: *const SohCnn, out: *mut usize) -> SohStatus {
    guard(|| {
        let c = handle(cnn, "cnn")?;
        write_out(out, c.inner.model.input_shape().size() / c.inner.input_length)
    })
}

fn window(v: &[f64], q: &[f64]) -> Outcome<PartialWindow> {
    if v.len() != q.len() || v.len() < 2 {
        return fail(
            SOH_ERR_INVALID_ARGUMENT,
            format!("need matching voltage and capacity arrays of >= 2 samples, got {} and {}", v.len(), q.len()),
        );
    }
    let q0 = q[0];
    Ok(PartialWindow {
        dod_initial: 0.0,
        dod_final: 0.0,
        curve: DischargeCurve::new(v.to_vec(), q.iter().map(|x| x - q0).collect()),
        source_cycle: 0,
    })
}

/// Estimate from raw window samples: voltage in V and cumulative
/// discharged capacity in Ah. Direct networks return SOH and ignore the
/// past window; increment networks need it and return the SOH change.
#[no_mangle]
pub unsafe extern "C" fn soh_cnn_predict_window(
    cnn: *const SohCnn,
    voltage: *const f64,
    capacity: *const f64,
    len: usize,
    past_voltage: *const f64,
    past_capacity: *const f64,
    past_len: usize,
    out: *mut f64,
) -> SohStatus {
    guard(|| {
        let c = &handle(cnn, "cnn")?.inner;
        let present = window(slice_arg(voltage, len, "voltage")?, slice_arg(capacity, len, "capacity")?)?;
        let past = if c.kind == Estimator::SohCnn {
            None
        } else {
            Some(window(
                slice_arg(past_voltage, past_len, "past_voltage")?,
                slice_arg(past_capacity, past_len, "past_capacity")?,
            )?)
        };
        let input = to_model_input(&present, past.as_ref(), c.input_length, c.nominal_capacity)
            .map_err(|e| Failure(SOH_ERR_INVALID_ARGUMENT, e.to_string()))?;
        let v = c.predict_input(&input).map_err(|e| Failure(SOH_ERR_COMPUTE, e.to_string()))?;
        write_out(out, v)
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_cnn_free(cnn: *mut SohCnn) {
    if !cnn.is_null() {
        drop(Box::from_raw(cnn));
    }
}

#[no_mangle]
pub unsafe extern "C" fn soh_forest_load(path: *const c_char, out: *mut *mut SohForest) -> SohStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = ForestModel::load(path).map_err(|e| Failure(SOH_ERR_IO, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SohForest { inner })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_forest_feature_count(forest: *const SohForest, out: *mut usize) -> SohStatus {
    guard(|| write_out(out, handle(forest, "forest")?.inner.n_features))
}

#[no_mangle]
pub unsafe extern "C" fn soh_forest_predict(
    forest: *const SohForest,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> SohStatus {
    guard(|| {
        let f = &handle(forest, "forest")?.inner;
        let x = slice_arg(features, len, "features")?;
        let v = f.predict(x).map_err(|e| Failure(SOH_ERR_INVALID_ARGUMENT, e.to_string()))?;
        write_out(out, v)
    })
}

#[no_mangle]
pub unsafe extern "C" fn soh_forest_free(forest: *mut SohForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// Runs a cross-validated evaluation from a JSON experiment config and
/// writes the report files to `output_dir`. `jobs` = 0 uses every core.
#[no_mangle]
pub unsafe extern "C" fn soh_evaluate(config_json: *const c_char, output_dir: *const c_char, jobs: usize) -> SohStatus {
    guard(|| {
        let config: ExperimentConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| Failure(SOH_ERR_PARSE, e.to_string()))?;
        let dir = PathBuf::from(str_arg(output_dir, "output_dir")?);
        let report = pipeline::run_evaluation(&config, &RunOptions { jobs }).map_err(|e| {
            let status = if e.is_validation() { SOH_ERR_INVALID_ARGUMENT } else { SOH_ERR_COMPUTE };
            Failure(status, e.to_string())
        })?;
        pipeline::write_evaluation(&dir, &report).map_err(|e| Failure(SOH_ERR_IO, e.to_string()))
    })
}
