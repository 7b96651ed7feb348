//! Partial-discharge windows and fixed-length model inputs.
//!
//! A window starts at a random depth of discharge `DoD_i` and covers a random
//! amount of charge `Q_max`, so that `DoD_f = DoD_i + Q_max / C_cell`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor1D;
use crate::seed;
use crate::types::{DischargeCurve, PartialWindow, CUTOFF_HIGH_V, CUTOFF_LOW_V};

#[derive(Debug, Error, PartialEq)]
pub enum PartialError {
    #[error("curve reaches DoD {reached:.6} but the window needs [{dod_initial:.6}, {dod_final:.6}]")]
    WindowOutsideCurve {
        dod_initial: f64,
        dod_final: f64,
        reached: f64,
    },
    #[error("window of cycle {cycle} is degenerate: {reason}")]
    DegenerateWindow { cycle: u32, reason: String },
    #[error("invalid window bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DodInitialDist {
    Gaussian { mean: f64, variance: f64 },
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformDist {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub dod_initial_dist: DodInitialDist,
    /// Charge covered by the window, Ah.
    pub q_max_dist: UniformDist,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::condition(2)
    }
}

impl WindowSpec {
    /// The four DoD-range presets, `index` in 1..=4, from widest to narrowest:
    /// `DoD_i ~ N(0.1 k, 1/900)` and `Q_max ~ U(..)` per condition.
    pub fn condition(index: usize) -> Self {
        let (mean, low, high) = match index {
            1 => (0.1, 0.67, 0.77),
            2 => (0.2, 0.45, 0.55),
            3 => (0.3, 0.25, 0.35),
            4 => (0.4, 0.05, 0.15),
            _ => panic!("condition index {index} not in 1..=4"),
        };
        WindowSpec {
            dod_initial_dist: DodInitialDist::Gaussian {
                mean,
                variance: 1.0 / 900.0,
            },
            q_max_dist: UniformDist { low, high },
            seed: 0,
        }
    }

    /// Windows starting from a full charge, used for the ICA comparison.
    pub fn low_dod() -> Self {
        WindowSpec {
            dod_initial_dist: DodInitialDist::Constant(0.0),
            q_max_dist: UniformDist { low: 0.65, high: 0.75 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PartialError> {
        match self.dod_initial_dist {
            DodInitialDist::Gaussian { mean, variance } => {
                if !(variance >= 0.0) || !mean.is_finite() || !variance.is_finite() {
                    return Err(PartialError::InvalidSpec(format!(
                        "gaussian needs finite mean and variance >= 0, got ({mean}, {variance})"
                    )));
                }
            }
            DodInitialDist::Constant(v) if !v.is_finite() => {
                return Err(PartialError::InvalidSpec(format!("constant DoD_i {v} not finite")));
            }
            _ => {}
        }
        let UniformDist { low, high } = self.q_max_dist;
        if !(low >= 0.0 && low <= high && high.is_finite()) {
            return Err(PartialError::InvalidSpec(format!(
                "q_max_dist needs 0 <= low <= high, got ({low}, {high})"
            )));
        }
        Ok(())
    }
}

/// Sampled window bounds together with the raw draws they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBounds {
    pub dod_initial: f64,
    pub dod_final: f64,
    pub q_max: f64,
    pub clipped: bool,
}

/// Draws `(DoD_i, DoD_f)` for a cell of the given capacity.
pub fn sample_window_bounds<R: Rng>(spec: &WindowSpec, cell_capacity: f64, rng: &mut R) -> WindowBounds {
    debug_assert!(cell_capacity > 0.0);
    let raw_initial = match spec.dod_initial_dist {
        DodInitialDist::Constant(v) => v,
        DodInitialDist::Gaussian { mean, variance } => {
            if variance == 0.0 {
                mean
            } else {
                Normal::new(mean, variance.sqrt()).expect("validated variance").sample(rng)
            }
        }
    };
    let UniformDist { low, high } = spec.q_max_dist;
    let q_max = if high > low { rng.gen_range(low..high) } else { low };
    bounds_from_draws(raw_initial, q_max, cell_capacity)
}

/// Applies the window relation with clipping of both ends to [0, 1].
pub fn bounds_from_draws(raw_initial: f64, q_max: f64, cell_capacity: f64) -> WindowBounds {
    let dod_initial = raw_initial.clamp(0.0, 1.0);
    let unclipped = dod_initial + q_max / cell_capacity;
    let dod_final = unclipped.min(1.0);
    WindowBounds {
        dod_initial,
        dod_final,
        q_max,
        clipped: dod_initial != raw_initial || unclipped > 1.0,
    }
}

/// Per-cycle RNG substream for window sampling.
pub fn window_rng(spec_seed: u64, cell_id: &str, cycle_index: u32) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive(
        spec_seed,
        &[seed::hash_str("window"), seed::hash_str(cell_id), cycle_index as u64],
    ))
}

fn interp_voltage(curve: &DischargeCurve, q: f64) -> f64 {
    let cap = &curve.capacity;
    let n = cap.len();
    if q <= cap[0] {
        return curve.voltage[0];
    }
    if q >= cap[n - 1] {
        return curve.voltage[n - 1];
    }
    // first index with cap[i] > q; cap[i-1] <= q < cap[i] so the segment has width
    let i = cap.partition_point(|&c| c <= q);
    let (q0, q1) = (cap[i - 1], cap[i]);
    let (v0, v1) = (curve.voltage[i - 1], curve.voltage[i]);
    v0 + (v1 - v0) * (q - q0) / (q1 - q0)
}

/// Cuts the window `[DoD_i, DoD_f]` out of a full curve. Endpoints are
/// linearly interpolated so the window spans the bounds exactly, and the
/// capacity axis is re-zeroed at the window start.
pub fn truncate(
    curve: &DischargeCurve,
    dod_initial: f64,
    dod_final: f64,
    cell_capacity: f64,
    source_cycle: u32,
) -> Result<PartialWindow, PartialError> {
    if !(dod_initial <= dod_final) || dod_initial < 0.0 || dod_final > 1.0 {
        return Err(PartialError::InvalidBounds(format!(
            "need 0 <= DoD_i <= DoD_f <= 1, got ({dod_initial}, {dod_final})"
        )));
    }
    if curve.len() < 2 || !(cell_capacity > 0.0) {
        return Err(PartialError::InvalidBounds("curve needs >= 2 samples and C_cell > 0".into()));
    }
    let q_lo = dod_initial * cell_capacity;
    let mut q_hi = dod_final * cell_capacity;
    let first = curve.capacity[0];
    let last = *curve.capacity.last().unwrap();
    let slack = 1e-9 * cell_capacity;
    if q_lo < first - slack || q_hi > last + slack {
        return Err(PartialError::WindowOutsideCurve {
            dod_initial,
            dod_final,
            reached: if q_hi > last { last / cell_capacity } else { first / cell_capacity },
        });
    }
    q_hi = q_hi.min(last);
    let q_lo = q_lo.max(first).min(q_hi);

    let mut voltage = vec![interp_voltage(curve, q_lo)];
    let mut capacity = vec![0.0];
    if q_hi > q_lo {
        for (&v, &q) in curve.voltage.iter().zip(&curve.capacity) {
            if q > q_lo && q < q_hi {
                voltage.push(v);
                capacity.push(q - q_lo);
            }
        }
        voltage.push(interp_voltage(curve, q_hi));
        capacity.push(q_hi - q_lo);
    }
    Ok(PartialWindow {
        dod_initial,
        dod_final,
        curve: DischargeCurve::new(voltage, capacity),
        source_cycle,
    })
}

/// Fixed-length normalized network input: `[V_t, Q_t]` or
/// `[V_t, Q_t, V_{t-1}, Q_{t-1}]`, each channel of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tensor: Tensor1D,
}

impl ModelInput {
    pub fn has_past(&self) -> bool {
        self.tensor.channels == 4
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.tensor.channel(c)
    }
}

pub const CHANNEL_LABELS: [&str; 4] = ["V_t", "Q_t", "V_t-1", "Q_t-1"];
pub const MIN_INPUT_LENGTH: usize = 8;

pub fn normalize_voltage(v: f64) -> f64 {
    ((v - CUTOFF_LOW_V) / (CUTOFF_HIGH_V - CUTOFF_LOW_V)).clamp(0.0, 1.0)
}

/// Resamples a window onto `length` points uniformly spaced in its own
/// capacity domain, returning normalized `(V, Q)` channels.
fn resample(
    window: &PartialWindow,
    length: usize,
    nominal_capacity: f64,
) -> Result<(Vec<f64>, Vec<f64>), PartialError> {
    let curve = &window.curve;
    let span = window.q_span();
    if curve.len() < 2 || !(span > 0.0) {
        return Err(PartialError::DegenerateWindow {
            cycle: window.source_cycle,
            reason: format!("zero-width window ({} samples, span {span} Ah)", curve.len()),
        });
    }
    let q0 = curve.capacity[0];
    let mut v_out = Vec::with_capacity(length);
    let mut q_out = Vec::with_capacity(length);
    for i in 0..length {
        let q = if i == length - 1 {
            q0 + span
        } else {
            q0 + span * i as f64 / (length - 1) as f64
        };
        v_out.push(normalize_voltage(interp_voltage(curve, q)));
        q_out.push(((q - q0) / nominal_capacity).clamp(0.0, 1.0));
    }
    Ok((v_out, q_out))
}

pub fn to_model_input(
    present: &PartialWindow,
    past: Option<&PartialWindow>,
    length: usize,
    nominal_capacity: f64,
) -> Result<ModelInput, PartialError> {
    if length < MIN_INPUT_LENGTH {
        return Err(PartialError::InvalidBounds(format!(
            "input length {length} below minimum {MIN_INPUT_LENGTH}"
        )));
    }
    let (v, q) = resample(present, length, nominal_capacity)?;
    let mut values = Vec::with_capacity(4 * length);
    values.extend_from_slice(&v);
    values.extend_from_slice(&q);
    let channels = if let Some(past) = past {
        let (pv, pq) = resample(past, length, nominal_capacity)?;
        values.extend_from_slice(&pv);
        values.extend_from_slice(&pq);
        4
    } else {
        2
    };
    Ok(ModelInput {
        tensor: Tensor1D::new(channels, length, values).expect("shape constructed above"),
    })
}
