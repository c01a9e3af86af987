//! Two-component Gaussian mixture over log teacher losses, fit with EM.
//!
//! The low-mean component models samples with clean labels; its posterior
//! weight at a sample's log-loss is that sample's clean-label probability.

use crate::nn::LOG_EPS;

const VAR_FLOOR: f64 = 1e-6;
const EM_TOL: f64 = 1e-6;
const EM_MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// Weight of the low-mean (clean) component.
    pub pi: f64,
    pub mu1: f64,
    pub sigma1_sq: f64,
    pub mu2: f64,
    pub sigma2_sq: f64,
    /// Set when the losses were unimodal-degenerate and no mixture was fit;
    /// every sample is then treated as clean.
    pub degenerate: bool,
    /// Log-likelihood after each EM step; non-decreasing.
    pub loglik_history: Vec<f64>,
}

/// Fits the mixture to `log(max(loss, eps))`. Components are ordered so that
/// `mu1 < mu2` on return. All-equal losses produce a degenerate model that
/// assigns clean probability 1 everywhere.
pub fn fit_noise_gmm(losses: &[f64]) -> NoiseModel {
    assert!(losses.len() >= 2, "need at least two losses to fit");
    let xs: Vec<f64> = losses.iter().map(|&l| l.max(LOG_EPS).ln()).collect();

    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return NoiseModel {
            pi: 0.5,
            mu1: lo,
            sigma1_sq: VAR_FLOOR,
            mu2: lo,
            sigma2_sq: VAR_FLOOR,
            degenerate: true,
            loglik_history: Vec::new(),
        };
    }

    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(VAR_FLOOR);
    let mut sorted = xs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |frac: f64| sorted[((sorted.len() - 1) as f64 * frac).round() as usize];

    let mut pi: f64 = 0.5;
    let mut mu1 = q(0.25);
    let mut mu2 = q(0.75);
    let mut s1 = var;
    let mut s2 = var;
    let mut loglik_history = Vec::new();
    let mut resp = vec![0.0; xs.len()];

    for _ in 0..EM_MAX_ITERS {
        // E step: responsibility of component 1 for each point.
        let mut loglik = 0.0;
        for (r, &x) in resp.iter_mut().zip(&xs) {
            let l1 = pi.ln() + log_normal_pdf(x, mu1, s1);
            let l2 = (1.0 - pi).ln() + log_normal_pdf(x, mu2, s2);
            let max = l1.max(l2);
            let total = max + ((l1 - max).exp() + (l2 - max).exp()).ln();
            *r = (l1 - total).exp();
            loglik += total;
        }
        let improved = loglik_history
            .last()
            .map(|prev| loglik - prev > EM_TOL)
            .unwrap_or(true);
        loglik_history.push(loglik);
        if !improved {
            break;
        }

        // M step.
        let n1: f64 = resp.iter().sum();
        let n2 = n - n1;
        if n1 < 1e-10 || n2 < 1e-10 {
            break;
        }
        pi = n1 / n;
        mu1 = resp.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>() / n1;
        mu2 = resp.iter().zip(&xs).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / n2;
        s1 = (resp
            .iter()
            .zip(&xs)
            .map(|(r, x)| r * (x - mu1) * (x - mu1))
            .sum::<f64>()
            / n1)
            .max(VAR_FLOOR);
        s2 = (resp
            .iter()
            .zip(&xs)
            .map(|(r, x)| (1.0 - r) * (x - mu2) * (x - mu2))
            .sum::<f64>()
            / n2)
            .max(VAR_FLOOR);
    }

    if mu1 > mu2 {
        std::mem::swap(&mut mu1, &mut mu2);
        std::mem::swap(&mut s1, &mut s2);
        pi = 1.0 - pi;
    }
    NoiseModel {
        pi,
        mu1,
        sigma1_sq: s1,
        mu2,
        sigma2_sq: s2,
        degenerate: false,
        loglik_history,
    }
}

/// Posterior weight of the clean (low-mean) component at `log(loss)`.
pub fn clean_probability(model: &NoiseModel, loss: f64) -> f64 {
    if model.degenerate {
        return 1.0;
    }
    let x = loss.max(LOG_EPS).ln();
    let l1 = model.pi.ln() + log_normal_pdf(x, model.mu1, model.sigma1_sq);
    let l2 = (1.0 - model.pi).ln() + log_normal_pdf(x, model.mu2, model.sigma2_sq);
    let max = l1.max(l2);
    let total = max + ((l1 - max).exp() + (l2 - max).exp()).ln();
    (l1 - total).exp()
}

fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * (d * d / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Losses whose logs are a half/half mixture of N(-3, 0.2^2) and
    /// N(0, 0.2^2).
    fn bimodal_losses(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mu = if i % 2 == 0 { -3.0 } else { 0.0 };
                let z: f64 = rng.sample(StandardNormal);
                (mu + 0.2 * z).exp()
            })
            .collect()
    }

    #[test]
    fn recovers_bimodal_parameters() {
        let losses = bimodal_losses(1, 2000);
        let model = fit_noise_gmm(&losses);
        assert!(!model.degenerate);
        assert!((model.mu1 + 3.0).abs() < 0.1, "mu1 = {}", model.mu1);
        assert!(model.mu2.abs() < 0.1, "mu2 = {}", model.mu2);
        assert!((model.pi - 0.5).abs() < 0.1, "pi = {}", model.pi);
    }

    #[test]
    fn loglik_is_monotone_non_decreasing() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let losses: Vec<f64> = (0..300).map(|_| rng.gen_range(1e-6..5.0)).collect();
            let model = fit_noise_gmm(&losses);
            for w in model.loglik_history.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "loglik fell: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn components_are_ordered() {
        let losses = bimodal_losses(5, 500);
        let model = fit_noise_gmm(&losses);
        assert!(model.mu1 < model.mu2);
    }

    #[test]
    fn all_equal_losses_degenerate_to_clean() {
        let model = fit_noise_gmm(&vec![0.7; 50]);
        assert!(model.degenerate);
        assert_eq!(clean_probability(&model, 0.7), 1.0);
        assert_eq!(clean_probability(&model, 123.0), 1.0);
    }

    #[test]
    fn far_separated_low_loss_is_clean() {
        let model = NoiseModel {
            pi: 0.5,
            mu1: -10.0,
            sigma1_sq: 1.0,
            mu2: 10.0,
            sigma2_sq: 1.0,
            degenerate: false,
            loglik_history: Vec::new(),
        };
        let p = clean_probability(&model, (-10.0_f64).exp());
        assert!(p > 1.0 - 1e-12);
    }

    #[test]
    fn crossing_point_with_equal_variances_is_half() {
        let model = NoiseModel {
            pi: 0.5,
            mu1: -2.0,
            sigma1_sq: 0.5,
            mu2: 2.0,
            sigma2_sq: 0.5,
            degenerate: false,
            loglik_history: Vec::new(),
        };
        // Equal-density crossing is the midpoint of the means.
        let p = clean_probability(&model, 0.0_f64.exp());
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clean_probability_is_monotone_in_loss_for_equal_variances() {
        let model = NoiseModel {
            pi: 0.4,
            mu1: -3.0,
            sigma1_sq: 0.8,
            mu2: 1.0,
            sigma2_sq: 0.8,
            degenerate: false,
            loglik_history: Vec::new(),
        };
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let loss = 1e-4 * (1.2_f64).powi(i);
            let p = clean_probability(&model, loss);
            assert!(p <= prev + 1e-12, "p_clean rose along the loss grid");
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn posteriors_of_both_components_sum_to_one() {
        let losses = bimodal_losses(9, 400);
        let model = fit_noise_gmm(&losses);
        for &l in losses.iter().take(50) {
            let p1 = clean_probability(&model, l);
            // Complement computed through the same log-domain path.
            let x = l.max(LOG_EPS).ln();
            let l1 = model.pi.ln() + log_normal_pdf(x, model.mu1, model.sigma1_sq);
            let l2 = (1.0 - model.pi).ln() + log_normal_pdf(x, model.mu2, model.sigma2_sq);
            let max = l1.max(l2);
            let total = max + ((l1 - max).exp() + (l2 - max).exp()).ln();
            let p2 = (l2 - total).exp();
            assert!((p1 + p2 - 1.0).abs() < 1e-12);
        }
    }
}
