use std::sync::Arc;

use super::config::TrainConfig;
use super::task::Task;
use crate::error::{Error, Result};
use crate::model::network::{forward, Bound};
use crate::model::{Checkpoint, ModelConfig, Moments, Params};
use crate::tensor::{Tape, Tensor};

/// Weights, optimizer accumulators and loss statistics of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub params: Params<f32>,
    pub m: Params<f32>,
    pub v: Params<f32>,
    /// Exponential moving average of the loss (factor 0.98).
    pub loss_ema: f64,
    pub last_loss: f64,
}

fn zeros_like(p: &Params<f32>) -> Params<f32> {
    Params::from_parts(
        p.names().to_vec(),
        p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
    )
}

impl TrainState {
    pub fn new(params: Params<f32>) -> Self {
        Self {
            step: 0,
            m: zeros_like(&params),
            v: zeros_like(&params),
            params,
            loss_ema: f64::NAN,
            last_loss: f64::NAN,
        }
    }

    pub fn init(model: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self::new(Params::init(model, seed)?))
    }

    pub fn to_checkpoint(&self, model: &ModelConfig) -> Checkpoint {
        Checkpoint {
            model: model.clone(),
            step: self.step,
            params: self.params.clone(),
            moments: Some(Moments {
                m: self.m.clone(),
                v: self.v.clone(),
            }),
        }
    }

    /// Resumes from a checkpoint; missing moments start at zero.
    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        let (m, v) = match ck.moments {
            Some(mo) => (mo.m, mo.v),
            None => (zeros_like(&ck.params), zeros_like(&ck.params)),
        };
        Self {
            step: ck.step,
            params: ck.params,
            m,
            v,
            loss_ema: f64::NAN,
            last_loss: f64::NAN,
        }
    }
}

/// Mean pinball loss of the raw head output on `task`, with gradients of
/// every parameter when `grad` is set.
pub fn task_loss(
    params: &Params<f32>,
    model: &ModelConfig,
    task: &Task,
    grad: bool,
) -> Result<(f64, Option<Vec<Tensor<f32>>>)> {
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, params, grad);
    let y = forward(&mut tape, &p, model, &task.batch)?;
    let q = model.n_quantiles();
    let n = task.batch.rows * task.batch.horizon_len();
    let y = tape.reshape(y, &[n, q])?;
    let target: Arc<[f32]> = task.targets.iter().map(|&v| v as f32).collect();
    let weight: Arc<[f32]> = task.weights.iter().map(|&v| v as f32).collect();
    let levels: Arc<[f32]> = model.quantile_levels.iter().map(|&v| v as f32).collect();
    let loss = tape.pinball(y, target, weight, levels)?;
    let value = f64::from(tape.value(loss).item());
    if !grad || !value.is_finite() {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    let g = p
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    Ok((value, Some(g)))
}

/// Bias-corrected adaptive-moment update of `state` with gradients `grads`
/// at learning rate `lr`. Advances the step counter.
pub fn adam_update(state: &mut TrainState, grads: &[Tensor<f32>], cfg: &TrainConfig, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let params = state.params.tensors_mut().iter_mut();
    let ms = state.m.tensors_mut().iter_mut();
    let vs = state.v.tensors_mut().iter_mut();
    for (((p, m), v), g) in params.zip(ms).zip(vs).zip(grads) {
        let it = p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data());
        for (((p, m), v), &g) in it {
            let g = f64::from(g);
            let mn = b1 * f64::from(*m) + (1.0 - b1) * g;
            let vn = b2 * f64::from(*v) + (1.0 - b2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let upd = lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            *p = (f64::from(*p) - upd) as f32;
        }
    }
}

/// Forward, pinball loss, backward and one optimizer update. A non-finite
/// loss aborts without touching the state.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    model: &ModelConfig,
    task: &Task,
    lr: f64,
) -> Result<f64> {
    let (loss, grads) = task_loss(&state.params, model, task, true)?;
    let grads = match grads {
        Some(g) if loss.is_finite() => g,
        _ => {
            return Err(Error::NonFinite {
                step: state.step + 1,
                detail: format!("loss {loss} on batch of {}", task.summary),
            })
        }
    };
    if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite {
            step: state.step + 1,
            detail: format!(
                "gradient of {} on batch of {}",
                state.params.names()[bad],
                task.summary
            ),
        });
    }
    adam_update(state, &grads, cfg, lr);
    state.last_loss = loss;
    state.loss_ema = if state.loss_ema.is_nan() {
        loss
    } else {
        0.98 * state.loss_ema + 0.02 * loss
    };
    Ok(loss)
}
