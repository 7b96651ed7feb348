use serde::{Deserialize, Serialize};

use super::NnError;

/// A `(channels, length)` block of finite reals, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor1D {
    pub channels: usize,
    pub length: usize,
    pub values: Vec<f64>,
}

impl Tensor1D {
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != channels * length {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a {channels}x{length} tensor",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(format!("tensor value {} at {i}", values[i])));
        }
        Ok(Tensor1D {
            channels,
            length,
            values,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Tensor1D {
            channels,
            length,
            values: vec![0.0; channels * length],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.length..(c + 1) * self.length]
    }
}
