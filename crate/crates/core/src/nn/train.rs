use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, CnnModel, NnError, Tensor1D};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor1D,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Loss above this counts as divergence.
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            step_size: 1e-3,
            seed: 0,
            divergence_limit: 1e8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(NnError::InvalidConfig(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(NnError::InvalidConfig("divergence_limit must be positive".into()));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            step_size: self.step_size,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn pack(model: &CnnModel, data: &[Sample]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let size = model.input_shape().size();
    let mut xs = Vec::with_capacity(data.len() * size);
    let mut ts = Vec::with_capacity(data.len());
    for s in data {
        if s.input.values.len() != size {
            return Err(NnError::ShapeMismatch(format!(
                "sample of size {} for model input {size}",
                s.input.values.len()
            )));
        }
        if !s.target.is_finite() {
            return Err(NnError::NonFinite(format!("target {}", s.target)));
        }
        xs.extend_from_slice(&s.input.values);
        ts.push(s.target);
    }
    Ok((xs, ts))
}

const EVAL_CHUNK: usize = 256;

fn mse(model: &CnnModel, xs: &[f64], ts: &[f64]) -> Result<f64, NnError> {
    let size = model.input_shape().size();
    let mut acc = 0.0;
    for (xc, tc) in xs.chunks(EVAL_CHUNK * size).zip(ts.chunks(EVAL_CHUNK)) {
        let out = model.forward_batch(xc, tc.len())?;
        acc += out.iter().zip(tc).map(|(f, t)| (f - t) * (f - t)).sum::<f64>();
    }
    Ok(acc / ts.len() as f64)
}

/// Mini-batch Adam on `0.5 * (f - t)^2`. Keeps the parameters with the
/// lowest validation MSE and stops after `patience` epochs without
/// improvement. Reported losses are MSE.
pub fn train(model: &mut CnnModel, data: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<TrainReport, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset("training set"));
    }
    if val.is_empty() {
        return Err(NnError::EmptyDataset("validation set"));
    }
    let (xs, ts) = pack(model, data)?;
    let (vxs, vts) = pack(model, val)?;
    let size = model.input_shape().size();
    let mut rng = seed::rng(seed::derive_named(config.seed, "shuffle"));
    let mut adam = AdamState::new(config.adam(), model.param_count());
    let mut grads = vec![0.0; model.param_count()];
    let mut params = model.params().to_vec();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    let mut bx = Vec::with_capacity(config.batch_size * size);
    let mut bt = Vec::with_capacity(config.batch_size);

    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            bt.clear();
            for &i in chunk {
                bx.extend_from_slice(&xs[i * size..(i + 1) * size]);
                bt.push(ts[i]);
            }
            let out = model.batch_gradient(&bx, &bt, &mut grads)?;
            let batch_sse: f64 = out.iter().zip(&bt).map(|(f, t)| (f - t) * (f - t)).sum();
            if !batch_sse.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteLoss { epoch, loss: batch_sse });
            }
            sse += batch_sse;
            adam.step(&mut params, &grads)?;
            model.set_params(&params)?;
        }
        let train_loss = sse / ts.len() as f64;
        let val_loss = mse(model, &vxs, &vts)?;
        if !val_loss.is_finite() || val_loss > config.divergence_limit || train_loss > config.divergence_limit {
            return Err(NnError::NonFiniteLoss {
                epoch,
                loss: val_loss.max(train_loss),
            });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        log::debug!("epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e}");
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.set_params(&best.2)?;
    Ok(TrainReport {
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
    })
}
