use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    activation_backward, activation_forward, dense_backward, dense_forward, ConvGeom, PoolGeom,
};
use super::{LayerSpec, NnError, Shape, Tensor1D};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "sohforge-cnn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Location of one layer's weights and biases inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub weights: (usize, usize),
    pub biases: (usize, usize),
}

impl ParamSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weights.0..self.weights.0 + self.weights.1
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.biases.0..self.biases.0 + self.biases.1
    }
}

/// Ordered layer stack with its parameters in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct CnnModel {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    slots: Vec<ParamSlot>,
    params: Vec<f64>,
    seed: u64,
}

/// Gradients of `0.5 * (output - target)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub output: f64,
    pub params: Vec<f64>,
    pub input: Tensor1D,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    seed: u64,
    params: Vec<f64>,
}

impl From<CnnModel> for Checkpoint {
    fn from(m: CnnModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_shape: m.input_shape,
            layers: m.layers,
            seed: m.seed,
            params: m.params,
        }
    }
}

impl TryFrom<Checkpoint> for CnnModel {
    type Error = String;

    fn try_from(ck: Checkpoint) -> Result<Self, String> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint {} v{}", ck.format, ck.version));
        }
        let mut model = CnnModel::with_zero_params(ck.input_shape, ck.layers, ck.seed).map_err(|e| e.to_string())?;
        model.set_params(&ck.params).map_err(|e| e.to_string())?;
        Ok(model)
    }
}

struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

impl CnnModel {
    /// Builds the stack, checks adjacent shapes and draws Glorot-uniform
    /// weights from `seed`. Biases start at zero.
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, seed_value: u64) -> Result<Self, NnError> {
        let mut model = Self::with_zero_params(input_shape, layers, seed_value)?;
        let mut rng = seed::rng(seed::derive_named(seed_value, "init"));
        for (i, spec) in model.layers.iter().enumerate() {
            let (_, _, fan_in, fan_out) = spec.param_layout(model.shapes[i]);
            let slot = model.slots[i];
            if slot.weights.1 == 0 {
                continue;
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut model.params[slot.weight_range()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(model)
    }

    fn with_zero_params(input_shape: Shape, layers: Vec<LayerSpec>, seed_value: u64) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidLayer("model needs at least one layer".into()));
        }
        if input_shape.size() == 0 {
            return Err(NnError::InvalidLayer("empty input shape".into()));
        }
        let mut shapes = vec![input_shape];
        let mut slots = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (i, spec) in layers.iter().enumerate() {
            let inp = shapes[i];
            let out = spec
                .output_shape(inp)
                .map_err(|e| NnError::InvalidLayer(format!("layer {}: {e}", i + 1)))?;
            let (nw, nb, _, _) = spec.param_layout(inp);
            slots.push(ParamSlot {
                weights: (offset, nw),
                biases: (offset + nw, nb),
            });
            offset += nw + nb;
            shapes.push(out);
        }
        let last = *shapes.last().unwrap();
        if last != Shape::Flat(1) {
            return Err(NnError::InvalidLayer(format!(
                "model must end in a single scalar, got {last:?}"
            )));
        }
        Ok(CnnModel {
            input_shape,
            layers,
            shapes,
            slots,
            params: vec![0.0; offset],
            seed: seed_value,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Shapes before and after every layer (`layers().len() + 1` entries).
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn check_input(&self, input: &Tensor1D) -> Result<(), NnError> {
        let ok = match self.input_shape {
            Shape::Seq { channels, length } => input.channels == channels && input.length == length,
            Shape::Flat(n) => input.values.len() == n,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch(format!(
                "input {}x{} does not match model input {:?}",
                input.channels, input.length, self.input_shape
            )))
        }
    }

    fn run(&self, batch: usize, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = vec![Vec::new(); self.layers.len()];
        acts.push(x.to_vec());
        for (i, spec) in self.layers.iter().enumerate() {
            let (inp, out) = (self.shapes[i], self.shapes[i + 1]);
            let mut y = vec![0.0; batch * out.size()];
            let slot = self.slots[i];
            let w = &self.params[slot.weight_range()];
            let b = &self.params[slot.bias_range()];
            let xin = &acts[i];
            match (*spec, inp, out) {
                (
                    LayerSpec::Conv1d { kernel, stride, filters },
                    Shape::Seq { channels, length },
                    Shape::Seq { length: out_length, .. },
                ) => ConvGeom {
                    in_channels: channels,
                    in_length: length,
                    filters,
                    kernel,
                    stride,
                    out_length,
                }
                .forward(batch, xin, w, b, &mut y),
                (
                    LayerSpec::MaxPool1d { size, stride },
                    Shape::Seq { channels, length },
                    Shape::Seq { length: out_length, .. },
                ) => {
                    let mut arg = vec![0u32; y.len()];
                    PoolGeom {
                        channels,
                        in_length: length,
                        size,
                        stride,
                        out_length,
                    }
                    .forward(batch, xin, &mut y, &mut arg);
                    argmax[i] = arg;
                }
                (LayerSpec::Flatten, _, _) => y.copy_from_slice(xin),
                (LayerSpec::FullyConnected { units }, Shape::Flat(n), _) => {
                    dense_forward(batch, n, units, xin, w, b, &mut y)
                }
                (LayerSpec::Activation(a), _, _) => activation_forward(a, xin, &mut y),
                _ => unreachable!("shapes validated at construction"),
            }
            acts.push(y);
        }
        Trace { acts, argmax }
    }

    /// Backpropagates `dout` (one value per sample) through a recorded trace.
    /// Parameter gradients are accumulated into `grads`; returns the input
    /// gradient when `want_input` is set.
    fn backprop(&self, batch: usize, trace: &Trace, dout: &[f64], grads: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let mut delta = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let (inp, out) = (self.shapes[i], self.shapes[i + 1]);
            let need_dx = i > 0 || want_input;
            let slot = self.slots[i];
            let w = &self.params[slot.weight_range()];
            let xin = &trace.acts[i];
            let mut dx = if need_dx { vec![0.0; batch * inp.size()] } else { Vec::new() };
            let (gw, gb) = {
                let (lo, hi) = grads.split_at_mut(slot.biases.0);
                (&mut lo[slot.weight_range()], &mut hi[..slot.biases.1])
            };
            match (self.layers[i], inp, out) {
                (
                    LayerSpec::Conv1d { kernel, stride, filters },
                    Shape::Seq { channels, length },
                    Shape::Seq { length: out_length, .. },
                ) => ConvGeom {
                    in_channels: channels,
                    in_length: length,
                    filters,
                    kernel,
                    stride,
                    out_length,
                }
                .backward(batch, xin, w, &delta, gw, gb, need_dx.then_some(dx.as_mut_slice())),
                (
                    LayerSpec::MaxPool1d { size, stride },
                    Shape::Seq { channels, length },
                    Shape::Seq { length: out_length, .. },
                ) => {
                    if need_dx {
                        PoolGeom {
                            channels,
                            in_length: length,
                            size,
                            stride,
                            out_length,
                        }
                        .backward(batch, &delta, &trace.argmax[i], &mut dx)
                    }
                }
                (LayerSpec::Flatten, _, _) => {
                    if need_dx {
                        dx.copy_from_slice(&delta)
                    }
                }
                (LayerSpec::FullyConnected { units }, Shape::Flat(n), _) => dense_backward(
                    batch,
                    n,
                    units,
                    xin,
                    w,
                    &delta,
                    gw,
                    gb,
                    need_dx.then_some(dx.as_mut_slice()),
                ),
                (LayerSpec::Activation(a), _, _) => {
                    if need_dx {
                        activation_backward(a, xin, &trace.acts[i + 1], &delta, &mut dx)
                    }
                }
                _ => unreachable!("shapes validated at construction"),
            }
            if !need_dx {
                return None;
            }
            delta = dx;
        }
        Some(delta)
    }

    pub fn forward(&self, input: &Tensor1D) -> Result<f64, NnError> {
        self.check_input(input)?;
        let trace = self.run(1, &input.values);
        Ok(trace.acts.last().unwrap()[0])
    }

    /// Outputs for `batch` samples laid out back to back in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>, NnError> {
        if inputs.len() != batch * self.input_shape.size() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a batch of {batch} inputs of size {}",
                inputs.len(),
                self.input_shape.size()
            )));
        }
        Ok(self.run(batch, inputs).acts.pop().unwrap())
    }

    /// Output of every layer for one input (entry 0 is the input itself).
    pub fn activations(&self, input: &Tensor1D) -> Result<Vec<Vec<f64>>, NnError> {
        self.check_input(input)?;
        Ok(self.run(1, &input.values).acts)
    }

    /// Gradients of `0.5 * (forward(input) - target)^2` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &Tensor1D, target: f64) -> Result<Gradients, NnError> {
        self.check_input(input)?;
        let trace = self.run(1, &input.values);
        let output = trace.acts.last().unwrap()[0];
        let mut params = vec![0.0; self.params.len()];
        let dx = self
            .backprop(1, &trace, &[output - target], &mut params, true)
            .expect("input gradient requested");
        Ok(Gradients {
            output,
            params,
            input: Tensor1D {
                channels: input.channels,
                length: input.length,
                values: dx,
            },
        })
    }

    /// d output / d input.
    pub fn input_gradient(&self, input: &Tensor1D) -> Result<Tensor1D, NnError> {
        self.check_input(input)?;
        let trace = self.run(1, &input.values);
        let mut scratch = vec![0.0; self.params.len()];
        let dx = self.backprop(1, &trace, &[1.0], &mut scratch, true).unwrap();
        Ok(Tensor1D {
            channels: input.channels,
            length: input.length,
            values: dx,
        })
    }

    /// Mini-batch gradient of `0.5 * mean((f - t)^2)` written into `grads`.
    /// Returns the batch outputs.
    pub fn batch_gradient(&self, inputs: &[f64], targets: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NnError> {
        let batch = targets.len();
        if inputs.len() != batch * self.input_shape.size() || grads.len() != self.params.len() {
            return Err(NnError::ShapeMismatch("batch gradient buffers".into()));
        }
        let trace = self.run(batch, inputs);
        let outputs = trace.acts.last().unwrap().clone();
        let dout: Vec<f64> = outputs
            .iter()
            .zip(targets)
            .map(|(f, t)| (f - t) / batch as f64)
            .collect();
        grads.fill(0.0);
        self.backprop(batch, &trace, &dout, grads, false);
        Ok(outputs)
    }

    /// Identifier of the linear region the input falls in: pooling winners
    /// and activation signs along the forward pass. Finite-difference checks
    /// are only meaningful between inputs sharing a pattern.
    pub fn decision_pattern(&self, input: &Tensor1D) -> Result<Vec<u32>, NnError> {
        self.check_input(input)?;
        let trace = self.run(1, &input.values);
        let mut out = Vec::new();
        for (i, spec) in self.layers.iter().enumerate() {
            match spec {
                LayerSpec::MaxPool1d { .. } => out.extend_from_slice(&trace.argmax[i]),
                LayerSpec::Activation(super::Activation::LeakyRelu { .. }) => {
                    out.extend(trace.acts[i].iter().map(|v| u32::from(*v > 0.0)))
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        serde_json::from_str(text).map_err(|e| NnError::Checkpoint {
            path: "<string>".into(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| NnError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            NnError::Checkpoint { reason, .. } => NnError::Checkpoint {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}
