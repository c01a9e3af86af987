//! Loss functions (plain and angular-margin cross entropy) and the
//! reverse-mode gradients of the full student forward path.

use super::{ForwardTrace, ModelParams, ProbVector};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};

/// Probabilities are clamped to this floor before `log` so cross entropy
/// stays finite.
pub const LOG_EPS: f64 = 1e-12;

/// Cosine clamp keeping `sqrt(1 - c^2)` differentiable in the margin path.
const COS_CLAMP: f64 = 1.0 - 1e-7;

/// Which loss the student trains with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    /// Additive angular margin on the label logit: `s*cos(theta_y + m)`.
    Aam { margin: f64, scale: f64 },
}

/// Per-sample losses plus their clean-probability-weighted mean.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub per_sample_loss: Vec<f64>,
    pub weighted_mean: f64,
}

/// Weighted cross entropy over a batch of probability vectors:
/// `(1/B) * sum_i w_i * (-log p_i(y_i))`, probabilities clamped at
/// [`LOG_EPS`]. With all weights 1 this is the plain unweighted mean.
pub fn weighted_cross_entropy(
    probs: &[ProbVector],
    labels: &[u32],
    clean_probs: &[f64],
) -> Result<LossReport> {
    if probs.len() != labels.len() || probs.len() != clean_probs.len() {
        return Err(Error::config("batch length mismatch"));
    }
    if probs.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let mut per_sample = Vec::with_capacity(probs.len());
    let mut weighted_sum = 0.0;
    for ((p, &y), &w) in probs.iter().zip(labels).zip(clean_probs) {
        let y = y as usize;
        if y >= p.len() {
            return Err(Error::config(format!("label {y} out of range {}", p.len())));
        }
        let loss = -p.values()[y].max(LOG_EPS).ln();
        per_sample.push(loss);
        weighted_sum += w * loss;
    }
    Ok(LossReport {
        weighted_mean: weighted_sum / per_sample.len() as f64,
        per_sample_loss: per_sample,
    })
}

/// Angular-margin logits: `s*cos(theta_k)` everywhere except the label,
/// which gets `s*cos(theta_label + m)`. Angles are between the L2-normalized
/// embedding and L2-normalized predictor rows; the predictor bias is unused.
pub fn aam_logits(
    z: &[f64],
    params: &ModelParams,
    label: u32,
    margin: f64,
    scale: f64,
) -> Result<Vec<f64>> {
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
        return Err(Error::config(format!("margin {margin} outside [0, pi/2)")));
    }
    if scale <= 0.0 {
        return Err(Error::config(format!("scale {scale} must be positive")));
    }
    let label = label as usize;
    if label >= params.num_clusters() {
        return Err(Error::config(format!("label {label} out of range")));
    }
    let zn = norm(z);
    if zn == 0.0 || !zn.is_finite() {
        return Err(Error::numerical("zero-norm embedding in margin loss"));
    }
    let k = params.num_clusters();
    let mut logits = Vec::with_capacity(k);
    for row_idx in 0..k {
        let row = params.predictor.weight.row(row_idx);
        let wn = norm(row);
        if wn == 0.0 || !wn.is_finite() {
            return Err(Error::numerical("zero-norm predictor row in margin loss"));
        }
        let cos = (dot(row, z) / (wn * zn)).clamp(-COS_CLAMP, COS_CLAMP);
        let logit = if row_idx == label {
            // cos(theta + m) = cos*cos(m) - sin*sin(m)
            scale * (cos * margin.cos() - (1.0 - cos * cos).sqrt() * margin.sin())
        } else {
            scale * cos
        };
        logits.push(logit);
    }
    Ok(logits)
}

/// Gradients with the same tensor layout as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub encoder: Vec<LayerGrad>,
    pub predictor: LayerGrad,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Grads {
            encoder: params
                .encoder
                .iter()
                .map(|l| LayerGrad {
                    weight: Mat::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
            predictor: LayerGrad {
                weight: Mat::zeros(params.predictor.out_dim(), params.predictor.in_dim()),
                bias: vec![0.0; params.predictor.out_dim()],
            },
        }
    }

    /// Flat tensor views in the order of [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.encoder {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
        }
        out.push(self.predictor.weight.as_slice());
        out.push(self.predictor.bias.as_slice());
        out
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        for (x, y) in self
            .predictor
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(other.predictor.weight.as_slice())
        {
            *x += y;
        }
        for (x, y) in self.predictor.bias.iter_mut().zip(&other.predictor.bias) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.encoder {
            for v in layer.weight.as_mut_slice() {
                *v *= factor;
            }
            for v in &mut layer.bias {
                *v *= factor;
            }
        }
        for v in self.predictor.weight.as_mut_slice() {
            *v *= factor;
        }
        for v in &mut self.predictor.bias {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Loss of one sample (unweighted). Same forward path that
/// [`sample_loss_grad`] differentiates; the finite-difference oracle
/// perturbs this function.
pub fn sample_loss(
    params: &ModelParams,
    x: &[f64],
    label: u32,
    kind: LossKind,
    dropout: Option<&[Vec<f64>]>,
) -> Result<f64> {
    let trace = super::forward_trace(params, x, dropout)?;
    let logits = logits_of(params, &trace.embedding, label, kind)?;
    let probs = super::softmax(&logits)?;
    Ok(-probs.values()[label as usize].max(LOG_EPS).ln())
}

/// Unweighted loss and `weight`-scaled gradients of one sample.
pub fn sample_loss_grad(
    params: &ModelParams,
    x: &[f64],
    label: u32,
    weight: f64,
    kind: LossKind,
    dropout: Option<&[Vec<f64>]>,
) -> Result<(f64, Grads)> {
    let trace = super::forward_trace(params, x, dropout)?;
    let logits = logits_of(params, &trace.embedding, label, kind)?;
    let probs = super::softmax(&logits)?;
    let y = label as usize;
    let loss = -probs.values()[y].max(LOG_EPS).ln();

    let mut grads = Grads::zeros_like(params);
    // d(loss)/d(logit_k) = p_k - [k == y]; zero when the clamp is active.
    let mut dlogits: Vec<f64> = probs.values().to_vec();
    if probs.values()[y] > LOG_EPS {
        dlogits[y] -= 1.0;
    } else {
        dlogits.iter_mut().for_each(|v| *v = 0.0);
    }
    for v in &mut dlogits {
        *v *= weight;
    }

    let dz = match kind {
        LossKind::CrossEntropy => {
            backward_plain_predictor(params, &trace.embedding, &dlogits, &mut grads)
        }
        LossKind::Aam { margin, scale } => {
            backward_aam_predictor(params, &trace.embedding, y, margin, scale, &dlogits, &mut grads)
        }
    };
    backward_encoder(params, &trace, dz, dropout, &mut grads);
    Ok((loss, grads))
}

fn logits_of(params: &ModelParams, z: &[f64], label: u32, kind: LossKind) -> Result<Vec<f64>> {
    match kind {
        LossKind::CrossEntropy => Ok(params.predictor.apply(z)),
        LossKind::Aam { margin, scale } => aam_logits(z, params, label, margin, scale),
    }
}

/// Plain linear predictor backward; returns d(loss)/d(embedding).
fn backward_plain_predictor(
    params: &ModelParams,
    z: &[f64],
    dlogits: &[f64],
    grads: &mut Grads,
) -> Vec<f64> {
    let k = params.num_clusters();
    let d = z.len();
    let mut dz = vec![0.0; d];
    for row in 0..k {
        let g = dlogits[row];
        grads.predictor.bias[row] += g;
        let wrow = params.predictor.weight.row(row);
        let grow = grads.predictor.weight.row_mut(row);
        for c in 0..d {
            grow[c] += g * z[c];
            dz[c] += g * wrow[c];
        }
    }
    dz
}

/// Backward through the margin logits, including the L2 normalizations of
/// both the embedding and the predictor rows. Returns d(loss)/d(embedding).
fn backward_aam_predictor(
    params: &ModelParams,
    z: &[f64],
    label: usize,
    margin: f64,
    scale: f64,
    dlogits: &[f64],
    grads: &mut Grads,
) -> Vec<f64> {
    let d = z.len();
    let zn = norm(z);
    let zhat: Vec<f64> = z.iter().map(|v| v / zn).collect();
    let mut dz = vec![0.0; d];
    for row_idx in 0..params.num_clusters() {
        let row = params.predictor.weight.row(row_idx);
        let wn = norm(row);
        let what: Vec<f64> = row.iter().map(|v| v / wn).collect();
        let cos_raw = dot(&what, &zhat);
        let cos = cos_raw.clamp(-COS_CLAMP, COS_CLAMP);
        // d(logit)/d(cos); zero when the clamp is active.
        let dlogit_dcos = if cos_raw.abs() >= COS_CLAMP {
            0.0
        } else if row_idx == label {
            scale * (margin.cos() + cos / (1.0 - cos * cos).sqrt() * margin.sin())
        } else {
            scale
        };
        let g = dlogits[row_idx] * dlogit_dcos;
        if g == 0.0 {
            continue;
        }
        // cos = what . zhat with what, zhat unit vectors:
        // d(cos)/dz = (what - cos*zhat)/|z|, d(cos)/dw = (zhat - cos*what)/|w|
        let grow = grads.predictor.weight.row_mut(row_idx);
        for c in 0..d {
            dz[c] += g * (what[c] - cos_raw * zhat[c]) / zn;
            grow[c] += g * (zhat[c] - cos_raw * what[c]) / wn;
        }
    }
    dz
}

/// Backward through the encoder stack given d(loss)/d(embedding).
fn backward_encoder(
    params: &ModelParams,
    trace: &ForwardTrace,
    mut grad: Vec<f64>,
    dropout: Option<&[Vec<f64>]>,
    grads: &mut Grads,
) {
    let n_layers = params.encoder.len();
    for i in (0..n_layers).rev() {
        if i + 1 < n_layers {
            // grad currently w.r.t. dropout(relu(pre_i))
            if let Some(masks) = dropout {
                for (g, m) in grad.iter_mut().zip(&masks[i]) {
                    *g *= m;
                }
            }
            for (g, pre) in grad.iter_mut().zip(&trace.pre_activations[i]) {
                if *pre <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let layer = &params.encoder[i];
        let input = &trace.layer_inputs[i];
        let mut dinput = vec![0.0; layer.in_dim()];
        for r in 0..layer.out_dim() {
            let g = grad[r];
            grads.encoder[i].bias[r] += g;
            let wrow = layer.weight.row(r);
            let grow = grads.encoder[i].weight.row_mut(r);
            for c in 0..layer.in_dim() {
                grow[c] += g * input[c];
                dinput[c] += g * wrow[c];
            }
        }
        grad = dinput;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let report = weighted_cross_entropy(&[p], &[1], &[1.0]).unwrap();
        assert_eq!(report.weighted_mean, 0.0);
        assert_eq!(report.per_sample_loss, vec![0.0]);
    }

    #[test]
    fn zero_weights_annihilate_loss() {
        let p = ProbVector::new(vec![0.9, 0.1]).unwrap();
        let report = weighted_cross_entropy(&[p.clone(), p], &[1, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(report.weighted_mean, 0.0);
        assert!(report.per_sample_loss[0] > 0.0);
    }

    #[test]
    fn weighted_single_sample_closed_form() {
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let report = weighted_cross_entropy(&[p], &[0], &[0.8]).unwrap();
        assert!((report.weighted_mean - 0.55452).abs() < 1e-5);
    }

    #[test]
    fn zero_probability_is_clamped_not_nan() {
        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let report = weighted_cross_entropy(&[p], &[1], &[1.0]).unwrap();
        assert!(report.weighted_mean.is_finite());
        assert!((report.per_sample_loss[0] + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn all_ones_weights_equal_plain_mean_bitwise() {
        let probs: Vec<ProbVector> = vec![
            ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap(),
            ProbVector::new(vec![0.6, 0.15, 0.25]).unwrap(),
            ProbVector::new(vec![0.01, 0.98, 0.01]).unwrap(),
        ];
        let labels = [2u32, 0, 1];
        let weighted = weighted_cross_entropy(&probs, &labels, &[1.0, 1.0, 1.0]).unwrap();
        let plain: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(p, &y)| 1.0 * -p.values()[y as usize].max(LOG_EPS).ln())
            .sum::<f64>()
            / 3.0;
        assert_eq!(weighted.weighted_mean, plain);
    }

    fn margin_params(seed: u64) -> ModelParams {
        ModelParams::init(&[4, 6, 3], 5, seed).unwrap()
    }

    #[test]
    fn zero_margin_reduces_to_scaled_cosines() {
        let params = margin_params(9);
        let z = [0.3, -0.8, 1.2];
        let logits = aam_logits(&z, &params, 2, 0.0, 32.0).unwrap();
        let zn = norm(&z);
        for (k, &logit) in logits.iter().enumerate() {
            let row = params.predictor.weight.row(k);
            let cos = dot(row, &z) / (norm(row) * zn);
            assert!((logit - 32.0 * cos).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_embedding_hits_margin_closed_form() {
        let mut params = margin_params(10);
        let z = [0.5, 0.25, -1.0];
        // Make the label row parallel to z.
        for (c, v) in z.iter().enumerate() {
            params.predictor.weight.set(1, c, 2.0 * v);
        }
        let logits = aam_logits(&z, &params, 1, 0.2, 32.0).unwrap();
        assert!((logits[1] - 31.362).abs() < 1e-2);
    }

    #[test]
    fn larger_margin_strictly_lowers_label_logit_only() {
        let params = margin_params(11);
        let z = [1.0, 0.2, 0.4];
        let a = aam_logits(&z, &params, 0, 0.1, 32.0).unwrap();
        let b = aam_logits(&z, &params, 0, 0.3, 32.0).unwrap();
        assert!(b[0] < a[0]);
        for k in 1..a.len() {
            assert_eq!(a[k], b[k]);
        }
    }

    #[test]
    fn zero_norm_embedding_is_a_numerical_error() {
        let params = margin_params(12);
        assert!(matches!(
            aam_logits(&[0.0, 0.0, 0.0], &params, 0, 0.2, 32.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn aam_with_zero_margin_matches_cosine_softmax_ce() {
        let params = margin_params(13);
        let z = [0.4, -0.7, 0.9];
        let loss_aam = {
            let logits = aam_logits(&z, &params, 1, 0.0, 8.0).unwrap();
            let p = super::super::softmax(&logits).unwrap();
            -p.values()[1].max(LOG_EPS).ln()
        };
        let loss_cos = {
            let zn = norm(&z);
            let logits: Vec<f64> = (0..params.num_clusters())
                .map(|k| {
                    let row = params.predictor.weight.row(k);
                    8.0 * dot(row, &z) / (norm(row) * zn)
                })
                .collect();
            let p = super::super::softmax(&logits).unwrap();
            -p.values()[1].max(LOG_EPS).ln()
        };
        assert!((loss_aam - loss_cos).abs() < 1e-9);
    }
}
