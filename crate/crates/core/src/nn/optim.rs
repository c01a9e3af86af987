//! Adam optimizer and the batched train step.

use super::{sample_loss_grad, Grads, LossKind, ModelParams};
use crate::error::{Error, Result};
use crate::par;

/// Adam moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine-annealed learning rate from `lr_start` (step 0) to `lr_end`
/// (step `total`).
pub fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let t = (step as f64 / total as f64).clamp(0.0, 1.0);
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// One batch of student training work.
pub struct TrainBatch<'a> {
    pub inputs: &'a [Vec<f64>],
    pub labels: &'a [u32],
    /// Clean-label probabilities weighting each sample's loss.
    pub weights: &'a [f64],
    /// Per-sample dropout multipliers (one vector per hidden layer), or
    /// `None` for no dropout.
    pub dropout: Option<&'a [Vec<Vec<f64>>]>,
}

/// Computes the weighted batch loss, accumulates per-sample gradients in a
/// fixed order and applies one Adam step. Returns the weighted mean loss.
///
/// Per-sample gradient work fans out via [`par::map_indexed`]; the reduction
/// is sequential in sample order, so results do not depend on thread count.
pub fn backward_and_step(
    params: &mut ModelParams,
    opt: &mut AdamState,
    lr: f64,
    batch: &TrainBatch,
    kind: LossKind,
) -> Result<f64> {
    let n = batch.inputs.len();
    if n == 0 || batch.labels.len() != n || batch.weights.len() != n {
        return Err(Error::config("batch length mismatch"));
    }
    let per_sample: Vec<Result<(f64, Grads)>> = par::map_indexed(batch.inputs, |i, x| {
        sample_loss_grad(
            params,
            x,
            batch.labels[i],
            batch.weights[i],
            kind,
            batch.dropout.map(|d| d[i].as_slice()),
        )
    });

    let mut total = Grads::zeros_like(params);
    let mut weighted_sum = 0.0;
    for (i, res) in per_sample.into_iter().enumerate() {
        let (loss, grads) = res?;
        weighted_sum += batch.weights[i] * loss;
        total.add_assign(&grads);
    }
    total.scale(1.0 / n as f64);
    if !total.all_finite() {
        return Err(Error::numerical("non-finite gradient in train step"));
    }
    let mean_loss = weighted_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::numerical("non-finite loss in train step"));
    }
    opt.apply(params, &total, lr);
    Ok(mean_loss)
}
