//! Teacher-student pseudo-label training at desk scale.
//!
//! A student MLP trains on cluster labels that an EMA teacher keeps
//! regenerating online (argmax or balanced optimal-transport assignment),
//! with per-sample label queues and a two-component GMM over teacher losses
//! down-weighting suspect labels. Synthetic clustered corpora plus the usual
//! clustering (NMI, Hungarian accuracy, purity) and verification (EER,
//! minDCF) metrics make the whole loop testable on one core.

pub mod clustering;
pub mod error;
pub mod labeling;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
