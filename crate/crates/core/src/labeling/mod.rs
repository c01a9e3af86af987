//! Pseudo-label queues, teacher-loss bookkeeping and GMM noise modeling.

mod gmm;
mod queue;

pub use gmm::{clean_probability, fit_noise_gmm, NoiseModel};
pub use queue::LabelQueue;

use crate::nn::{ProbVector, LOG_EPS};

/// Cross entropy of the teacher at the corrected label, clamped like the
/// student loss.
pub fn teacher_loss(p_t: &ProbVector, corrected_label: u32) -> f64 {
    -p_t.values()[corrected_label as usize].max(LOG_EPS).ln()
}

/// Per-sample teacher losses and clean-label probabilities.
#[derive(Debug, Clone)]
pub struct TeacherLossTable {
    pub losses: Vec<f64>,
    pub p_clean: Vec<f64>,
}

impl TeacherLossTable {
    /// Clean-label probabilities start at 1 for every sample.
    pub fn new(n: usize) -> Self {
        TeacherLossTable {
            losses: vec![0.0; n],
            p_clean: vec![1.0; n],
        }
    }

    pub fn record_loss(&mut self, sample: usize, loss: f64) {
        self.losses[sample] = loss;
    }

    /// Refits the noise model on the full loss table and refreshes every
    /// clean probability. Returns the fitted model.
    pub fn refresh_clean_probs(&mut self) -> NoiseModel {
        let model = fit_noise_gmm(&self.losses);
        for (p, &loss) in self.p_clean.iter_mut().zip(&self.losses) {
            *p = clean_probability(&model, loss);
        }
        model
    }

    pub fn mean_p_clean(&self) -> f64 {
        self.p_clean.iter().sum::<f64>() / self.p_clean.len().max(1) as f64
    }
}

/// CSV line for the per-epoch noise-model log:
/// `epoch, pi, mu1, sigma1, mu2, sigma2, mean_p_clean`.
pub fn noise_model_csv_line(epoch: usize, model: &NoiseModel, mean_p_clean: f64) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        epoch,
        model.pi,
        model.mu1,
        model.sigma1_sq.sqrt(),
        model.mu2,
        model.sigma2_sq.sqrt(),
        mean_p_clean
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_loss_closed_forms() {
        let p = ProbVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(teacher_loss(&p, 1), 0.0);

        let e_inv = (-1.0_f64).exp();
        let p = ProbVector::new(vec![e_inv, 1.0 - e_inv]).unwrap();
        assert!((teacher_loss(&p, 0) - 1.0).abs() < 1e-12);

        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let clamped = teacher_loss(&p, 1);
        assert!(clamped.is_finite());
        assert!((clamped + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_table_initializes_clean() {
        let table = TeacherLossTable::new(4);
        assert_eq!(table.p_clean, vec![1.0; 4]);
    }
}
