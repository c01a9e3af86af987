//! Run configuration, parsed from a TOML key-value file.
//!
//! Every field has a default; unknown keys are a hard error.

use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::synth::CorpusSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusteringMode {
    /// Teacher argmax per sample.
    Argmax,
    /// Batched balanced assignment via Sinkhorn-Knopp.
    Sinkhorn,
    /// Degenerate baseline: the student labels itself from its own argmax.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    Ce,
    Aam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorInit {
    /// Rows start at the mean embedding of each initial cluster.
    Centroid,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KmeansSpace {
    /// Cluster the raw input features.
    Raw,
    /// Cluster the untrained encoder's embeddings.
    Embedding,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Directory holding corpus.csv/trials.csv; empty means generate from
    /// `corpus` below.
    pub corpus_path: String,
    pub corpus: CorpusSpec,

    pub k_init: usize,
    /// E1: epochs of student training on the frozen initial labels.
    pub warmup_epochs: usize,
    /// E2: reflective-learning epochs.
    pub ssrl_epochs: usize,
    /// B.
    pub batch_size: usize,
    /// M: batches accumulated per Sinkhorn flush.
    pub sinkhorn_batches: usize,
    pub sinkhorn_lambda: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    /// L: pseudo-label queue length (1 disables correction).
    pub queue_len: usize,

    pub ema_start: f64,
    pub ema_end: f64,
    pub warmup_lr_start: f64,
    pub warmup_lr_end: f64,
    pub lr_start: f64,
    pub lr_end: f64,

    pub loss: LossChoice,
    pub aam_margin: f64,
    pub aam_scale: f64,
    /// First reflective epoch (1-based) on which the margin applies when
    /// `loss = "aam"`; 1 keeps it on throughout.
    pub aam_from_epoch: usize,

    pub mode: ClusteringMode,
    pub use_ema: bool,
    pub use_queue: bool,
    pub use_gmm: bool,

    pub dropout: f64,
    pub aug_strength: f64,
    pub aug_mask_fraction: f64,
    pub aug_probability: f64,

    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub predictor_init: PredictorInit,
    pub kmeans_space: KmeansSpace,
    pub kmeans_iters: usize,

    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: String::new(),
            corpus: CorpusSpec::default(),
            k_init: 80,
            warmup_epochs: 20,
            ssrl_epochs: 60,
            batch_size: 100,
            sinkhorn_batches: 4,
            sinkhorn_lambda: 25.0,
            sinkhorn_max_iters: 300,
            sinkhorn_tol: 1e-6,
            queue_len: 5,
            ema_start: 0.95,
            ema_end: 0.99,
            warmup_lr_start: 1e-3,
            warmup_lr_end: 1e-5,
            lr_start: 5e-4,
            lr_end: 1e-5,
            loss: LossChoice::Ce,
            aam_margin: 0.2,
            aam_scale: 32.0,
            aam_from_epoch: 1,
            mode: ClusteringMode::Argmax,
            use_ema: true,
            use_queue: true,
            use_gmm: true,
            dropout: 0.1,
            aug_strength: 1.0,
            aug_mask_fraction: 0.2,
            aug_probability: 2.0 / 3.0,
            hidden_dims: vec![64, 64],
            embedding_dim: 32,
            predictor_init: PredictorInit::Centroid,
            kmeans_space: KmeansSpace::Raw,
            kmeans_iters: 100,
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.k_init < 2 {
            return Err(Error::config("k_init must be at least 2"));
        }
        if self.queue_len == 0 {
            return Err(Error::config("queue_len must be at least 1"));
        }
        if self.mode == ClusteringMode::Sinkhorn
            && self.sinkhorn_batches * self.batch_size <= self.k_init
        {
            return Err(Error::config(format!(
                "sinkhorn needs M*B > k_init ({} * {} <= {})",
                self.sinkhorn_batches, self.batch_size, self.k_init
            )));
        }
        if !(0.0..1.0).contains(&self.ema_start) || !(0.0..1.0).contains(&self.ema_end) {
            return Err(Error::config("ema bounds must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if self.hidden_dims.is_empty() || self.embedding_dim == 0 {
            return Err(Error::config("encoder needs hidden dims and embedding_dim"));
        }
        if self.corpus_path.is_empty() {
            self.corpus.validate()?;
        }
        Ok(())
    }

    /// Encoder dimension chain `[d_in, hidden.., embedding]`.
    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.embedding_dim);
        dims
    }

    /// The loss the student trains with during the given reflective epoch
    /// (1-based); warm-up passes epoch 1.
    pub fn loss_kind_at(&self, epoch: usize) -> LossKind {
        match self.loss {
            LossChoice::Ce => LossKind::CrossEntropy,
            LossChoice::Aam if epoch >= self.aam_from_epoch => LossKind::Aam {
                margin: self.aam_margin,
                scale: self.aam_scale,
            },
            LossChoice::Aam => LossKind::CrossEntropy,
        }
    }
}
