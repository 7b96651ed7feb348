//! Incremental capacity analysis: SVR smoothing of a discharge window,
//! dQ/dV on a uniform voltage grid, and extraction of the deepest IC
//! minimum.
//!
//! Q is discharged capacity, so it grows as V falls and dQ/dV is negative.
//! The feature of interest is the most negative IC value.

mod svr;

pub use svr::{svr_fit_xy, SvrConfig, SvrModel, MIN_SVR_SAMPLES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::PartialWindow;

#[derive(Debug, Error)]
pub enum IcaError {
    #[error("SVR solver stopped after {iterations} iterations with KKT violation {violation:.3e}")]
    SolverNotConverged { iterations: usize, violation: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid ICA config: {0}")]
    InvalidConfig(String),
}

pub const MIN_GRID_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcCurve {
    pub voltage_grid: Vec<f64>,
    pub ic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcFeature {
    /// Signed IC value at the minimum, Ah/V.
    pub value: f64,
    pub location: f64,
}

impl IcFeature {
    pub fn magnitude(&self) -> f64 {
        self.value.abs()
    }
}

/// Minimum prominence a dip needs to count as a feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prominence {
    /// In Ah/V.
    Absolute(f64),
    /// Fraction of the IC curve's value range.
    RangeFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    pub svr: SvrConfig,
    pub grid_size: usize,
    pub prominence_fraction: f64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            svr: SvrConfig::default(),
            grid_size: 256,
            prominence_fraction: 0.05,
        }
    }
}

impl IcaConfig {
    pub fn validate(&self) -> Result<(), IcaError> {
        self.svr.validate()?;
        if self.grid_size < MIN_GRID_SIZE {
            return Err(IcaError::InvalidConfig(format!(
                "grid_size {} < {MIN_GRID_SIZE}",
                self.grid_size
            )));
        }
        if !(self.prominence_fraction >= 0.0 && self.prominence_fraction < 1.0) {
            return Err(IcaError::InvalidConfig("prominence_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// SVR fit of Q as a function of V over the window's samples.
pub fn svr_fit(window: &PartialWindow, config: &SvrConfig) -> Result<SvrModel, IcaError> {
    svr_fit_xy(&window.curve.voltage, &window.curve.capacity, config)
}

/// Central differences of `smooth_q` on `grid_size` uniform points over
/// `[v_lo, v_hi]`; one-sided at the two ends.
pub fn compute_ic(smooth_q: impl Fn(f64) -> f64, v_lo: f64, v_hi: f64, grid_size: usize) -> IcCurve {
    assert!(v_lo < v_hi && grid_size >= 2, "compute_ic needs v_lo < v_hi and >= 2 points");
    let h = (v_hi - v_lo) / (grid_size - 1) as f64;
    let voltage_grid: Vec<f64> = (0..grid_size)
        .map(|i| if i == grid_size - 1 { v_hi } else { v_lo + h * i as f64 })
        .collect();
    let q: Vec<f64> = voltage_grid.iter().map(|&v| smooth_q(v)).collect();
    let n = grid_size;
    let ic = (0..n)
        .map(|i| match i {
            0 => (q[1] - q[0]) / (voltage_grid[1] - voltage_grid[0]),
            _ if i == n - 1 => (q[n - 1] - q[n - 2]) / (voltage_grid[n - 1] - voltage_grid[n - 2]),
            _ => (q[i + 1] - q[i - 1]) / (voltage_grid[i + 1] - voltage_grid[i - 1]),
        })
        .collect();
    IcCurve { voltage_grid, ic }
}

/// Interior local maxima of `s` as `(left_edge, right_edge)` runs; flat
/// tops count once.
fn local_maxima(s: &[f64]) -> Vec<(usize, usize)> {
    let n = s.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    let mut i = 1;
    while i < n - 1 {
        if s[i - 1] < s[i] {
            let mut ahead = i + 1;
            while ahead < n - 1 && s[ahead] == s[i] {
                ahead += 1;
            }
            if s[ahead] < s[i] {
                out.push((i, ahead - 1));
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

/// Height of the peak at `p` above the higher of its two bases.
fn prominence(s: &[f64], p: usize) -> f64 {
    let top = s[p];
    let mut left_min = top;
    let mut i = p as isize;
    while i >= 0 && s[i as usize] <= top {
        left_min = left_min.min(s[i as usize]);
        i -= 1;
    }
    let mut right_min = top;
    let mut j = p;
    while j < s.len() && s[j] <= top {
        right_min = right_min.min(s[j]);
        j += 1;
    }
    top - left_min.max(right_min)
}

/// Deepest interior IC minimum whose prominence reaches `threshold`.
pub fn extract_extreme(curve: &IcCurve, threshold: f64) -> Option<IcFeature> {
    let s: Vec<f64> = curve.ic.iter().map(|v| -v).collect();
    let mut best: Option<IcFeature> = None;
    for (l, r) in local_maxima(&s) {
        let mid = (l + r) / 2;
        if prominence(&s, mid) < threshold {
            continue;
        }
        let value = curve.ic[mid];
        if best.is_none_or(|b| value < b.value) {
            best = Some(IcFeature {
                value,
                location: curve.voltage_grid[mid],
            });
        }
    }
    best
}

pub fn resolve_prominence(curve: &IcCurve, rule: Prominence) -> f64 {
    match rule {
        Prominence::Absolute(p) => p,
        Prominence::RangeFraction(f) => {
            let lo = curve.ic.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = curve.ic.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            f * (hi - lo)
        }
    }
}

/// Fitted IC curve over the window's voltage span.
pub fn window_ic(window: &PartialWindow, svr: &SvrConfig, grid_size: usize) -> Result<IcCurve, IcaError> {
    if grid_size < MIN_GRID_SIZE {
        return Err(IcaError::InvalidConfig(format!("grid_size {grid_size} < {MIN_GRID_SIZE}")));
    }
    let model = svr_fit(window, svr)?;
    let (lo, hi) = model.x_range;
    Ok(compute_ic(|v| model.eval(v), lo, hi, grid_size))
}

/// SVR fit, IC curve and deepest-minimum extraction in one call.
pub fn ica_features(
    window: &PartialWindow,
    svr: &SvrConfig,
    grid_size: usize,
    rule: Prominence,
) -> Result<Option<IcFeature>, IcaError> {
    let curve = window_ic(window, svr, grid_size)?;
    Ok(extract_extreme(&curve, resolve_prominence(&curve, rule)))
}

impl IcaConfig {
    pub fn features(&self, window: &PartialWindow) -> Result<Option<IcFeature>, IcaError> {
        ica_features(
            window,
            &self.svr,
            self.grid_size,
            Prominence::RangeFraction(self.prominence_fraction),
        )
    }
}
