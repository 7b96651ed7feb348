//! The two CNN estimators: direct SOH from the present window, and the
//! cycle-to-cycle SOH increment from present and past windows, plus the
//! increment rollout and input-sensitivity profiles.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Activation, CnnModel, LayerSpec, NnError, Sample, Shape, Tensor1D, TrainConfig, TrainReport};
use crate::partial::{to_model_input, ModelInput, PartialError, CHANNEL_LABELS};
use crate::types::{Estimator, PartialWindow, SohEstimate};

pub const CONV_FILTERS: usize = 50;
pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 1;
pub const POOL_SIZE: usize = 3;
pub const POOL_STRIDE: usize = 3;
pub const FC_FIRST: usize = 550;
pub const FC_REST: usize = 200;
pub const FC_REST_COUNT: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_INPUT_LENGTH: usize = 225;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input length {length} is too short for the network (needs >= {minimum})")]
    IncompatibleLength { length: usize, minimum: usize },
    #[error("degenerate window at cycle {cycle}: {reason}")]
    DegenerateWindow { cycle: u32, reason: String },
    #[error("window: {0}")]
    Window(PartialError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("rollout needs at least 2 cycles, got {0}")]
    TooFewCycles(usize),
    #[error("no samples")]
    NoSamples,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

impl From<PartialError> for ModelError {
    fn from(e: PartialError) -> Self {
        match e {
            PartialError::DegenerateWindow { cycle, reason } => ModelError::DegenerateWindow { cycle, reason },
            other => ModelError::Window(other),
        }
    }
}

/// The shared convolutional stack with leaky activations after every conv
/// and hidden dense layer and a linear scalar head.
pub fn table1_layers() -> Vec<LayerSpec> {
    let act = LayerSpec::Activation(Activation::LeakyRelu { slope: LEAKY_SLOPE });
    let conv = LayerSpec::Conv1d {
        filters: CONV_FILTERS,
        kernel: CONV_KERNEL,
        stride: CONV_STRIDE,
    };
    let pool = LayerSpec::MaxPool1d {
        size: POOL_SIZE,
        stride: POOL_STRIDE,
    };
    let mut layers = vec![conv, act, pool, conv, act, pool, LayerSpec::Flatten, LayerSpec::dense(FC_FIRST), act];
    for _ in 0..FC_REST_COUNT {
        layers.push(LayerSpec::dense(FC_REST));
        layers.push(act);
    }
    layers.push(LayerSpec::dense(1));
    layers
}

/// Length after one valid conv followed by one pool, or `None` on underflow.
fn block_length(length: usize) -> Option<usize> {
    let conv = length.checked_sub(CONV_KERNEL)? / CONV_STRIDE + 1;
    let pooled = conv.checked_sub(POOL_SIZE)? / POOL_STRIDE + 1;
    Some(pooled)
}

/// Width of the flattened feature vector for input length `length`.
pub fn flatten_width(length: usize) -> Option<usize> {
    let after = block_length(block_length(length)?)?;
    (after >= 1).then_some(after * CONV_FILTERS)
}

fn minimum_length() -> usize {
    (1..).find(|l| flatten_width(*l).is_some()).unwrap()
}

fn build(channels: usize, length: usize, seed: u64) -> Result<CnnModel, ModelError> {
    if flatten_width(length).is_none() {
        return Err(ModelError::IncompatibleLength {
            length,
            minimum: minimum_length(),
        });
    }
    Ok(CnnModel::new(Shape::Seq { channels, length }, table1_layers(), seed)?)
}

/// Two-channel `[V_t, Q_t]` network.
pub fn build_soh_cnn(length: usize, seed: u64) -> Result<CnnModel, ModelError> {
    build(2, length, seed)
}

/// Four-channel `[V_t, Q_t, V_t-1, Q_t-1]` network.
pub fn build_dsoh_cnn(length: usize, seed: u64) -> Result<CnnModel, ModelError> {
    build(4, length, seed)
}

/// Affine map between network output and the physical target:
/// `target = offset + scale * output`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl TargetScaling {
    pub fn identity() -> Self {
        TargetScaling { offset: 0.0, scale: 1.0 }
    }

    /// Mean and standard deviation of the training targets.
    pub fn fit(targets: &[f64]) -> Self {
        if targets.is_empty() {
            return Self::identity();
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        TargetScaling {
            offset: mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn to_network(&self, target: f64) -> f64 {
        (target - self.offset) / self.scale
    }

    pub fn from_network(&self, output: f64) -> f64 {
        self.offset + self.scale * output
    }
}

/// Per-element standardization of network inputs, `z = (x - mean) / scale`,
/// fitted on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Elements whose spread is below `floor` keep unit scale.
    pub fn fit(inputs: &[&Tensor1D], floor: f64) -> Option<Self> {
        let first = inputs.first()?;
        let n = inputs.len() as f64;
        let size = first.values.len();
        let mut mean = vec![0.0; size];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(&x.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; size];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(&x.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > floor {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Some(InputScaling { mean, scale })
    }

    pub fn apply(&self, x: &Tensor1D) -> Result<Tensor1D, ModelError> {
        if x.values.len() != self.mean.len() {
            return Err(NnError::ShapeMismatch(format!(
                "input of size {} for scaling of size {}",
                x.values.len(),
                self.mean.len()
            ))
            .into());
        }
        let values = x
            .values
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Ok(Tensor1D::new(x.channels, x.length, values)?)
    }
}

/// Spread below which an input element is left unscaled.
pub const INPUT_SCALE_FLOOR: f64 = 1e-6;

/// A network bundled with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnEstimator {
    pub kind: Estimator,
    pub input_length: usize,
    pub nominal_capacity: f64,
    pub scaling: TargetScaling,
    #[serde(default)]
    pub input_scaling: Option<InputScaling>,
    pub model: CnnModel,
}

impl CnnEstimator {
    pub fn new(kind: Estimator, model: CnnModel, nominal_capacity: f64, scaling: TargetScaling) -> Self {
        let input_length = match model.input_shape() {
            Shape::Seq { length, .. } => length,
            Shape::Flat(n) => n,
        };
        CnnEstimator {
            kind,
            input_length,
            nominal_capacity,
            scaling,
            input_scaling: None,
            model,
        }
    }

    /// The tensor the network sees for `input`.
    pub fn network_input(&self, input: &ModelInput) -> Result<Tensor1D, ModelError> {
        match &self.input_scaling {
            Some(s) => s.apply(&input.tensor),
            None => Ok(input.tensor.clone()),
        }
    }

    pub fn input(&self, present: &PartialWindow, past: Option<&PartialWindow>) -> Result<ModelInput, ModelError> {
        Ok(to_model_input(present, past, self.input_length, self.nominal_capacity)?)
    }

    pub fn predict_input(&self, input: &ModelInput) -> Result<f64, ModelError> {
        Ok(self.scaling.from_network(self.model.forward(&self.network_input(input)?)?))
    }

    /// [`Self::predict_input`] over many inputs, evaluated in chunks.
    pub fn predict_batch(&self, inputs: &[&ModelInput]) -> Result<Vec<f64>, ModelError> {
        const CHUNK: usize = 128;
        let mut out = Vec::with_capacity(inputs.len());
        let mut buf = Vec::new();
        for chunk in inputs.chunks(CHUNK) {
            buf.clear();
            for x in chunk {
                buf.extend_from_slice(&self.network_input(x)?.values);
            }
            let raw = self.model.forward_batch(&buf, chunk.len())?;
            out.extend(raw.into_iter().map(|o| self.scaling.from_network(o)));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("estimator serializes");
        std::fs::write(path, text).map_err(|e| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let err = |reason: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Mean absolute sensitivity in target units.
    /// Mean absolute sensitivity in target units per unit of `ModelInput`.
    pub fn sensitivity(&self, samples: &[ModelInput]) -> Result<SensitivityProfile, ModelError> {
        let scaled = samples
            .iter()
            .map(|x| Ok(ModelInput { tensor: self.network_input(x)? }))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let mut p = sensitivity(&self.model, &scaled)?;
        let s = self.scaling.scale.abs();
        match &self.input_scaling {
            Some(inp) => p.values.iter_mut().zip(&inp.scale).for_each(|(v, d)| *v *= s / d),
            None => p.values.iter_mut().for_each(|v| *v *= s),
        }
        Ok(p)
    }
}

pub fn estimate_soh_direct(est: &CnnEstimator, window: &PartialWindow) -> Result<SohEstimate, ModelError> {
    let input = est.input(window, None)?;
    Ok(SohEstimate {
        cycle_index: window.source_cycle,
        value: est.predict_input(&input)?,
        source: Estimator::SohCnn,
    })
}

pub fn estimate_dsoh(est: &CnnEstimator, present: &PartialWindow, past: &PartialWindow) -> Result<f64, ModelError> {
    let input = est.input(present, Some(past))?;
    est.predict_input(&input)
}

/// Anything that can produce the SOH change between two windows.
pub trait DsohPredictor {
    fn predict_dsoh(&self, present: &PartialWindow, past: &PartialWindow) -> Result<f64, ModelError>;
}

impl DsohPredictor for CnnEstimator {
    fn predict_dsoh(&self, present: &PartialWindow, past: &PartialWindow) -> Result<f64, ModelError> {
        estimate_dsoh(self, present, past)
    }
}

impl<F: Fn(&PartialWindow, &PartialWindow) -> f64> DsohPredictor for F {
    fn predict_dsoh(&self, present: &PartialWindow, past: &PartialWindow) -> Result<f64, ModelError> {
        Ok(self(present, past))
    }
}

/// `soh[0] = soh_initial`, `soh[t] = soh[t-1] + dsoh(window[t], window[t-1])`.
pub fn rollout_soh(
    predictor: &impl DsohPredictor,
    windows: &[PartialWindow],
    soh_initial: f64,
) -> Result<Vec<SohEstimate>, ModelError> {
    if windows.len() < 2 {
        return Err(ModelError::TooFewCycles(windows.len()));
    }
    let mut out = Vec::with_capacity(windows.len());
    let mut soh = soh_initial;
    out.push(SohEstimate {
        cycle_index: windows[0].source_cycle,
        value: soh,
        source: Estimator::DsohCnn,
    });
    for t in 1..windows.len() {
        soh += predictor.predict_dsoh(&windows[t], &windows[t - 1])?;
        out.push(SohEstimate {
            cycle_index: windows[t].source_cycle,
            value: soh,
            source: Estimator::DsohCnn,
        });
    }
    Ok(out)
}

/// Mean `|d output / d input|` per channel and position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub channels: Vec<String>,
    pub length: usize,
    pub samples: usize,
    /// `channels.len() * length`, row-major by channel.
    pub values: Vec<f64>,
}

impl SensitivityProfile {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    /// Mass in the first half of a channel divided by the second half.
    pub fn half_ratio(&self, c: usize) -> f64 {
        let ch = self.channel(c);
        let mid = self.length / 2;
        let first: f64 = ch[..mid].iter().sum();
        let second: f64 = ch[self.length - mid..].iter().sum();
        first / second
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "channel,position,mean_abs_grad")?;
        for (c, name) in self.channels.iter().enumerate() {
            for (i, v) in self.channel(c).iter().enumerate() {
                writeln!(out, "{name},{i},{v}")?;
            }
        }
        Ok(())
    }
}

pub fn sensitivity(model: &CnnModel, samples: &[ModelInput]) -> Result<SensitivityProfile, ModelError> {
    let first = samples.first().ok_or(ModelError::NoSamples)?;
    let (channels, length) = (first.tensor.channels, first.tensor.length);
    let mut acc = vec![0.0; channels * length];
    for s in samples {
        let g = model.input_gradient(&s.tensor)?;
        for (a, v) in acc.iter_mut().zip(&g.values) {
            *a += v.abs();
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(SensitivityProfile {
        channels: CHANNEL_LABELS[..channels].iter().map(|s| s.to_string()).collect(),
        length,
        samples: samples.len(),
        values: acc,
    })
}

/// Trains a freshly initialized network on `(input, physical target)`
/// pairs; inputs and targets are standardized with statistics of the
/// training set.
pub fn train_estimator(
    kind: Estimator,
    model: CnnModel,
    train: &[(ModelInput, f64)],
    val: &[(ModelInput, f64)],
    nominal_capacity: f64,
    config: &TrainConfig,
) -> Result<(CnnEstimator, TrainReport), ModelError> {
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::NoSamples);
    }
    let targets: Vec<f64> = train.iter().map(|(_, t)| *t).collect();
    let scaling = TargetScaling::fit(&targets);
    let inputs: Vec<&Tensor1D> = train.iter().map(|(x, _)| &x.tensor).collect();
    let mut est = CnnEstimator::new(kind, model, nominal_capacity, scaling);
    est.input_scaling = InputScaling::fit(&inputs, INPUT_SCALE_FLOOR);
    let to_samples = |set: &[(ModelInput, f64)]| -> Result<Vec<Sample>, ModelError> {
        set.iter()
            .map(|(x, t)| {
                Ok(Sample {
                    input: est.network_input(x)?,
                    target: scaling.to_network(*t),
                })
            })
            .collect()
    };
    let (train, val) = (to_samples(train)?, to_samples(val)?);
    let report = nn::train(&mut est.model, &train, &val, config)?;
    Ok((est, report))
}

/// Zeroes the weights of the final dense layer, leaving its bias.
pub fn zero_output_weights(model: &mut CnnModel) {
    let slot = *model.slots().last().expect("non-empty model");
    let range = slot.weight_range();
    model.params_mut()[range].fill(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CellTraits, VoltageModel};
    use crate::partial::truncate;

    fn window(soh: f64, a: f64, b: f64, cycle: u32) -> PartialWindow {
        let m = VoltageModel::for_soh(soh, 1.1, &CellTraits::nominal());
        truncate(&m.sample_curve(300), a, b, m.cell_capacity, cycle).unwrap()
    }

    #[test]
    fn flatten_width_chain() {
        // 225 -> 223 -> 74 -> 72 -> 24
        assert_eq!(flatten_width(225), Some(1200));
        let m = build_soh_cnn(225, 1).unwrap();
        let flat = m.shapes().iter().position(|s| matches!(s, Shape::Flat(_))).unwrap();
        assert_eq!(m.shapes()[flat], Shape::Flat(1200));
    }

    #[test]
    fn short_input_rejected() {
        assert!(matches!(build_soh_cnn(5, 0), Err(ModelError::IncompatibleLength { length: 5, .. })));
        let min = minimum_length();
        assert!(build_dsoh_cnn(min, 0).is_ok());
        assert!(build_dsoh_cnn(min - 1, 0).is_err());
    }

    #[test]
    fn builds_are_seeded() {
        assert_eq!(build_soh_cnn(64, 3).unwrap().params(), build_soh_cnn(64, 3).unwrap().params());
        assert_eq!(build_dsoh_cnn(64, 3).unwrap().input_shape(), Shape::Seq { channels: 4, length: 64 });
    }

    #[test]
    fn zeroed_head_returns_bias() {
        let mut m = build_soh_cnn(64, 2).unwrap();
        zero_output_weights(&mut m);
        let bias_idx = m.slots().last().unwrap().biases.0;
        m.params_mut()[bias_idx] = 0.8731;
        let est = CnnEstimator::new(Estimator::SohCnn, m, 1.1, TargetScaling::identity());
        let w = window(0.9, 0.2, 0.7, 4);
        let e = estimate_soh_direct(&est, &w).unwrap();
        assert_eq!(e.value, 0.8731);
        assert_eq!(e.cycle_index, 4);
        assert_eq!(estimate_soh_direct(&est, &w).unwrap(), e);
    }

    #[test]
    fn degenerate_window_reports_cycle() {
        let est = CnnEstimator::new(Estimator::SohCnn, build_soh_cnn(64, 2).unwrap(), 1.1, TargetScaling::identity());
        let w = window(0.9, 0.3, 0.3, 17);
        assert!(matches!(estimate_soh_direct(&est, &w), Err(ModelError::DegenerateWindow { cycle: 17, .. })));
    }

    #[test]
    fn rollout_arithmetic() {
        let ws: Vec<PartialWindow> = (0..5).map(|c| window(0.9, 0.2, 0.7, c)).collect();
        let step = |_: &PartialWindow, _: &PartialWindow| -0.01;
        let vals: Vec<f64> = rollout_soh(&step, &ws, 1.0).unwrap().iter().map(|e| e.value).collect();
        // same left-to-right accumulation as the recursion
        let mut expect = vec![1.0];
        for _ in 1..5 {
            expect.push(expect.last().unwrap() + -0.01);
        }
        assert_eq!(vals, expect);
        for (v, t) in vals.iter().zip([1.0, 0.99, 0.98, 0.97, 0.96]) {
            assert!((v - t).abs() < 1e-15);
        }
        let zero = |_: &PartialWindow, _: &PartialWindow| 0.0;
        assert!(rollout_soh(&zero, &ws, 0.93).unwrap().iter().all(|e| e.value == 0.93));
        assert!(matches!(rollout_soh(&zero, &ws[..1], 1.0), Err(ModelError::TooFewCycles(1))));
    }

    #[test]
    fn rollout_aborts_at_degenerate_cycle() {
        let est = CnnEstimator::new(Estimator::DsohCnn, build_dsoh_cnn(64, 2).unwrap(), 1.1, TargetScaling::identity());
        let ws = vec![window(0.9, 0.2, 0.7, 0), window(0.9, 0.2, 0.7, 1), window(0.9, 0.5, 0.5, 2)];
        assert!(matches!(rollout_soh(&est, &ws, 1.0), Err(ModelError::DegenerateWindow { cycle: 2, .. })));
    }

    #[test]
    fn sensitivity_zero_path_and_duplicates() {
        let mut m = build_soh_cnn(32, 5).unwrap();
        // first conv weights have shape (filters, channels, kernel)
        let slot = m.slots()[0];
        let w = &mut m.params_mut()[slot.weight_range()];
        for f in 0..CONV_FILTERS {
            for k in 0..CONV_KERNEL {
                w[f * 2 * CONV_KERNEL + CONV_KERNEL + k] = 0.0;
            }
        }
        let est = CnnEstimator::new(Estimator::SohCnn, m.clone(), 1.1, TargetScaling::identity());
        let inputs: Vec<ModelInput> = [0.95, 0.85]
            .iter()
            .map(|s| est.input(&window(*s, 0.1, 0.6, 0), None).unwrap())
            .collect();
        let p = sensitivity(&m, &inputs).unwrap();
        assert!(p.channel(1).iter().all(|v| *v == 0.0));
        assert!(p.channel(0).iter().any(|v| *v > 0.0));
        let doubled: Vec<ModelInput> = inputs.iter().chain(&inputs).cloned().collect();
        let q = sensitivity(&m, &doubled).unwrap();
        for (a, b) in p.values.iter().zip(&q.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
        let mut csv = Vec::new();
        p.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("channel,position,mean_abs_grad\nV_t,0,"));
        assert_eq!(text.lines().count(), 1 + 2 * 32);
    }

    #[test]
    fn scaling_round_trip() {
        let s = TargetScaling::fit(&[0.9, 0.95, 1.0]);
        assert!((s.from_network(s.to_network(0.97)) - 0.97).abs() < 1e-15);
        assert_eq!(TargetScaling::fit(&[0.5, 0.5]).scale, 1.0);
    }

    #[test]
    fn estimator_checkpoint_round_trip() {
        let est = CnnEstimator::new(
            Estimator::DsohCnn,
            build_dsoh_cnn(32, 8).unwrap(),
            1.1,
            TargetScaling { offset: -0.001, scale: 3e-4 },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        est.save(&p).unwrap();
        assert_eq!(CnnEstimator::load(&p).unwrap(), est);
    }
}
