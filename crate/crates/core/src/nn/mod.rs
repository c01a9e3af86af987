//! Student/teacher MLP encoder with a linear cluster predictor.
//!
//! The encoder is a stack of dense layers with `max(0, x)` between them (none
//! after the last layer); the predictor maps the embedding to `K` cluster
//! logits. Two independent `ModelParams` instances play the student and
//! teacher roles.

mod checkpoint;
mod ema;
mod loss;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ema::{ema_update, MomentumSchedule};
pub use loss::{
    aam_logits, sample_loss, sample_loss_grad, weighted_cross_entropy, Grads, LayerGrad,
    LossKind, LossReport, LOG_EPS,
};
pub use optim::{backward_and_step, cosine_lr, AdamState, TrainBatch};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One dense layer: `y = weight * x + bias` with `weight` stored out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseLayer {
            weight: Mat::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

/// Encoder layers plus the K-way linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<DenseLayer>,
    pub predictor: DenseLayer,
}

impl ModelParams {
    /// Deterministic initialization: every weight and bias drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` using a ChaCha stream seeded by
    /// `seed`. `dims` is the encoder dimension chain `[d_in, h1, .., d_emb]`.
    pub fn init(dims: &[usize], num_clusters: usize, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("encoder needs at least one layer"));
        }
        if num_clusters < 2 {
            return Err(Error::config("predictor needs at least 2 clusters"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        for win in dims.windows(2) {
            encoder.push(random_layer(win[1], win[0], &mut rng));
        }
        let emb = *dims.last().unwrap();
        let predictor = random_layer(num_clusters, emb, &mut rng);
        let params = ModelParams { encoder, predictor };
        params.validate()?;
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.last().unwrap().out_dim()
    }

    pub fn num_clusters(&self) -> usize {
        self.predictor.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::config("encoder has no layers"));
        }
        for pair in self.encoder.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::config(format!(
                    "encoder layer chain mismatch: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if self.predictor.in_dim() != self.embedding_dim() {
            return Err(Error::config(format!(
                "predictor expects dim {}, embedding is {}",
                self.predictor.in_dim(),
                self.embedding_dim()
            )));
        }
        for layer in self.encoder.iter().chain(std::iter::once(&self.predictor)) {
            if !layer.weight.all_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::config("non-finite parameter"));
            }
        }
        Ok(())
    }

    /// All parameter tensors in a fixed order (encoder weights/biases, then
    /// predictor weight/bias). The optimizer and EMA update rely on this
    /// order matching [`Grads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.predictor.weight.as_mut_slice());
        out.push(self.predictor.bias.as_mut_slice());
        out
    }

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
}

fn random_layer(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    let scale = 1.0 / (in_dim as f64).sqrt();
    let mut layer = DenseLayer::zeros(out_dim, in_dim);
    for v in layer.weight.as_mut_slice() {
        *v = rng.gen_range(-scale..scale);
    }
    for v in &mut layer.bias {
        *v = rng.gen_range(-scale..scale);
    }
    layer
}

/// Probability vector over K clusters: nonnegative, sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("empty probability vector"));
        }
        let sum: f64 = values.iter().sum();
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::numerical(format!(
                "invalid probability vector (sum = {sum})"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-sample record of everything the backward pass needs.
pub struct ForwardTrace {
    /// Input to each encoder layer (post nonlinearity and dropout of the
    /// previous one); `layer_inputs[0]` is the raw feature vector.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-nonlinearity output of each encoder layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub embedding: Vec<f64>,
}

/// Deterministic embedding `z = encoder(x)`; no dropout.
pub fn encode(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(params, x, None)?.embedding)
}

/// Forward pass through the encoder keeping intermediate activations.
///
/// `dropout` holds one multiplier vector per hidden layer (0 for dropped
/// units, `1/(1-rate)` for kept ones); `None` disables dropout.
pub fn forward_trace(
    params: &ModelParams,
    x: &[f64],
    dropout: Option<&[Vec<f64>]>,
) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::config(format!(
            "input has dim {}, encoder expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let n_layers = params.encoder.len();
    if let Some(masks) = dropout {
        if masks.len() != n_layers.saturating_sub(1) {
            return Err(Error::config("one dropout mask per hidden layer expected"));
        }
    }
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut h = x.to_vec();
    for (i, layer) in params.encoder.iter().enumerate() {
        layer_inputs.push(h.clone());
        let pre = layer.apply(&h);
        h = if i + 1 < n_layers {
            let mut act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            if let Some(masks) = dropout {
                for (a, m) in act.iter_mut().zip(&masks[i]) {
                    *a *= m;
                }
            }
            act
        } else {
            pre.clone()
        };
        pre_activations.push(pre);
    }
    Ok(ForwardTrace {
        layer_inputs,
        pre_activations,
        embedding: h,
    })
}

/// Softmax of the predictor logits, stable via max-subtraction.
pub fn predict(params: &ModelParams, z: &[f64]) -> Result<ProbVector> {
    if z.len() != params.predictor.in_dim() {
        return Err(Error::config(format!(
            "embedding has dim {}, predictor expects {}",
            z.len(),
            params.predictor.in_dim()
        )));
    }
    softmax(&params.predictor.apply(z))
}

pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("non-finite logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbVector::new(exps.iter().map(|v| v / sum).collect())
}

/// Sample inverted-dropout multipliers for every hidden layer of `params`.
pub fn sample_dropout_masks(params: &ModelParams, rate: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let widths: Vec<usize> = params.encoder[..params.encoder.len() - 1]
        .iter()
        .map(|layer| layer.out_dim())
        .collect();
    dropout_masks_for_widths(&widths, rate, rng)
}

/// Same as [`sample_dropout_masks`] given the hidden-layer widths directly.
pub fn dropout_masks_for_widths(
    widths: &[usize],
    rate: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let keep = 1.0 - rate;
    widths
        .iter()
        .map(|&w| {
            (0..w)
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> ModelParams {
        ModelParams::init(&[4, 5, 3], 4, seed).unwrap()
    }

    #[test]
    fn encode_zero_weights_gives_zero_embedding() {
        let params = ModelParams {
            encoder: vec![DenseLayer::zeros(3, 4)],
            predictor: DenseLayer::zeros(2, 3),
        };
        let z = encode(&params, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(z, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_identity_layer_is_identity() {
        let mut layer = DenseLayer::zeros(3, 3);
        for i in 0..3 {
            layer.weight.set(i, i, 1.0);
        }
        let params = ModelParams {
            encoder: vec![layer],
            predictor: DenseLayer::zeros(2, 3),
        };
        let x = [0.7, -1.3, 2.2];
        assert_eq!(encode(&params, &x).unwrap(), x.to_vec());
    }

    // Straight-line re-implementation of the forward pass, kept deliberately
    // independent of Mat/DenseLayer internals.
    fn oracle_forward(params: &ModelParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, layer) in params.encoder.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            for r in 0..layer.out_dim() {
                let mut acc = layer.bias[r];
                for c in 0..layer.in_dim() {
                    acc += layer.weight.get(r, c) * h[c];
                }
                next[r] = acc;
            }
            if li + 1 < params.encoder.len() {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = next;
        }
        h
    }

    #[test]
    fn encode_matches_independent_forward_pass() {
        let params = ModelParams::init(&[6, 8, 8, 5], 7, 1).unwrap();
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = encode(&params, &x).unwrap();
        let want = oracle_forward(&params, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let params = small_params(0);
        assert!(matches!(
            encode(&params, &[1.0, 2.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn predict_uniform_on_equal_logits() {
        let prob = softmax(&[0.4, 0.4, 0.4, 0.4]).unwrap();
        for &p in prob.values() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_survives_huge_logit() {
        let prob = softmax(&[1000.0, 0.0, 0.0]).unwrap();
        assert!(prob.values()[0] > 1.0 - 1e-9);
        assert!(prob.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_closed_form_example() {
        let prob = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let want = [0.09003, 0.24473, 0.66524];
        for (p, w) in prob.values().iter().zip(&want) {
            assert!((p - w).abs() < 1e-5);
        }
    }

    #[test]
    fn predict_rejects_non_finite_logits() {
        assert!(matches!(
            softmax(&[f64::NAN, 0.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let logits = [0.3, -2.0, 1.7, 0.0, 5.5];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = softmax(&logits).unwrap();
        let b = softmax(&shifted).unwrap();
        assert!((a.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = small_params(42);
        let b = small_params(42);
        assert_eq!(a, b);
        let c = small_params(43);
        assert_ne!(a, c);
    }

    #[test]
    fn dropout_mask_scale_preserves_expectation() {
        let params = small_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sum = 0.0;
        let mut count = 0;
        for _ in 0..2000 {
            for mask in sample_dropout_masks(&params, 0.1, &mut rng) {
                sum += mask.iter().sum::<f64>();
                count += mask.len();
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean multiplier {mean}");
    }
}
