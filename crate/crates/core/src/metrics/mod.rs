//! Clustering-quality metrics (NMI, Hungarian accuracy, purity) and
//! verification scoring (cosine, EER, minDCF).

mod hungarian;
mod verification;

pub use hungarian::max_weight_assignment;
pub use verification::{eer, min_dcf, DcfParams};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use std::collections::HashMap;

/// Predicted cluster ids paired with ground-truth class ids.
#[derive(Debug, Clone)]
pub struct LabelPair<'a> {
    pub predicted: &'a [u32],
    pub truth: &'a [u32],
}

impl<'a> LabelPair<'a> {
    pub fn new(predicted: &'a [u32], truth: &'a [u32]) -> Result<Self> {
        if predicted.is_empty() || predicted.len() != truth.len() {
            return Err(Error::config("label pair must be non-empty, equal length"));
        }
        Ok(LabelPair { predicted, truth })
    }

    /// Contingency counts plus the list of distinct ids on each side.
    fn contingency(&self) -> (Vec<Vec<i64>>, Vec<u32>, Vec<u32>) {
        let mut pred_ids: Vec<u32> = self.predicted.to_vec();
        pred_ids.sort_unstable();
        pred_ids.dedup();
        let mut truth_ids: Vec<u32> = self.truth.to_vec();
        truth_ids.sort_unstable();
        truth_ids.dedup();
        let pred_index: HashMap<u32, usize> =
            pred_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let truth_index: HashMap<u32, usize> =
            truth_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut counts = vec![vec![0i64; truth_ids.len()]; pred_ids.len()];
        for (&p, &t) in self.predicted.iter().zip(self.truth) {
            counts[pred_index[&p]][truth_index[&t]] += 1;
        }
        (counts, pred_ids, truth_ids)
    }
}

/// Mutual information normalized by the arithmetic mean of the two label
/// entropies. Two single-class partitions count as a perfect match.
pub fn nmi(pair: &LabelPair) -> f64 {
    let (counts, _, _) = pair.contingency();
    let n = pair.predicted.len() as f64;
    let row_sums: Vec<f64> = counts
        .iter()
        .map(|r| r.iter().sum::<i64>() as f64)
        .collect();
    let col_sums: Vec<f64> = (0..counts[0].len())
        .map(|c| counts.iter().map(|r| r[c]).sum::<i64>() as f64)
        .collect();

    let entropy = |sums: &[f64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_sums);
    let h_truth = entropy(&col_sums);
    if h_pred == 0.0 && h_truth == 0.0 {
        return 1.0;
    }

    let mut mi = 0.0;
    for (r, row) in counts.iter().enumerate() {
        for (c, &cnt) in row.iter().enumerate() {
            if cnt > 0 {
                let p = cnt as f64 / n;
                mi += p * (p * n * n / (row_sums[r] * col_sums[c])).ln();
            }
        }
    }
    (2.0 * mi / (h_pred + h_truth)).clamp(0.0, 1.0)
}

/// Classification accuracy (percent) after the optimal one-to-one matching
/// of pseudo clusters to true classes. With more pseudo clusters than true
/// classes, members of unmatched clusters all count as errors.
pub fn hungarian_accuracy(pair: &LabelPair) -> f64 {
    let (counts, _, _) = pair.contingency();
    let rows = counts.len();
    let cols = counts[0].len();
    let matched: i64 = if rows <= cols {
        let assignment = max_weight_assignment(&counts);
        assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| counts[r][c])
            .sum()
    } else {
        let transposed: Vec<Vec<i64>> = (0..cols)
            .map(|c| (0..rows).map(|r| counts[r][c]).collect())
            .collect();
        let assignment = max_weight_assignment(&transposed);
        assignment
            .iter()
            .enumerate()
            .map(|(c, &r)| counts[r][c])
            .sum()
    };
    matched as f64 / pair.predicted.len() as f64 * 100.0
}

/// Mean over non-empty pseudo clusters of the dominant true-class fraction,
/// in percent.
pub fn mean_max_purity(pair: &LabelPair) -> f64 {
    let (counts, _, _) = pair.contingency();
    let mut total = 0.0;
    for row in &counts {
        let size: i64 = row.iter().sum();
        let max = row.iter().max().copied().unwrap_or(0);
        total += max as f64 / size as f64;
    }
    total / counts.len() as f64 * 100.0
}

/// Cosine similarity of two embeddings.
pub fn cosine_score(z1: &[f64], z2: &[f64]) -> Result<f64> {
    let n1 = norm(z1);
    let n2 = norm(z2);
    if n1 == 0.0 || n2 == 0.0 || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::numerical("zero-norm embedding in cosine score"));
    }
    Ok(dot(z1, z2) / (n1 * n2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nmi_is_one_on_identical_partitions() {
        let labels = [0u32, 0, 1, 1, 2, 2];
        let pair = LabelPair::new(&labels, &labels).unwrap();
        assert!((nmi(&pair) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_invariant_under_relabeling() {
        let truth = [0u32, 0, 1, 1, 2, 2];
        let relabeled = [5u32, 5, 9, 9, 0, 0];
        let pair = LabelPair::new(&relabeled, &truth).unwrap();
        assert!((nmi(&pair) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_of_independent_labels_is_near_zero() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth: Vec<u32> = (0..n).map(|i| (i % 10) as u32).collect();
        let predicted: Vec<u32> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        let got = nmi(&pair);
        // Independent oracle: NMI through H(X)+H(Y)-H(X,Y).
        let mut joint = HashMap::new();
        for (&p, &t) in predicted.iter().zip(&truth) {
            *joint.entry((p, t)).or_insert(0usize) += 1;
        }
        let h = |counts: &[usize]| -> f64 {
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n as f64;
                    -p * p.ln()
                })
                .sum()
        };
        let hx = h(&(0..10)
            .map(|k| predicted.iter().filter(|&&v| v == k).count())
            .collect::<Vec<_>>());
        let hy = h(&(0..10)
            .map(|k| truth.iter().filter(|&&v| v == k).count())
            .collect::<Vec<_>>());
        let hxy = h(&joint.values().copied().collect::<Vec<_>>());
        let want = 2.0 * (hx + hy - hxy) / (hx + hy);
        assert!((got - want).abs() < 1e-9);
        assert!(got < 0.05, "nmi {got}");
    }

    #[test]
    fn single_class_both_sides_is_perfect() {
        let labels = [3u32; 5];
        let pair = LabelPair::new(&labels, &[0, 0, 0, 0, 0]).unwrap();
        assert_eq!(nmi(&pair), 1.0);
    }

    #[test]
    fn accuracy_sees_through_permutations() {
        let truth = [0u32, 0, 1, 1];
        let predicted = [1u32, 1, 0, 0];
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        assert_eq!(hungarian_accuracy(&pair), 100.0);
    }

    #[test]
    fn accuracy_of_half_matching_split() {
        let truth = [0u32, 0, 1, 1];
        let predicted = [0u32, 1, 0, 1];
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        assert_eq!(hungarian_accuracy(&pair), 50.0);
    }

    /// Exhaustive injective matching over padded square contingency tables.
    fn brute_force_accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
        let pair = LabelPair::new(predicted, truth).unwrap();
        let (counts, _, _) = pair.contingency();
        let s = counts.len().max(counts[0].len());
        let mut padded = vec![vec![0i64; s]; s];
        for (r, row) in counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                padded[r][c] = v;
            }
        }
        let best: i64 = (0..s)
            .permutations(s)
            .map(|cols| {
                cols.iter()
                    .enumerate()
                    .map(|(r, &c)| padded[r][c])
                    .sum::<i64>()
            })
            .max()
            .unwrap();
        best as f64 / predicted.len() as f64 * 100.0
    }

    #[test]
    fn accuracy_matches_factorial_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let n = rng.gen_range(4..40);
            let kp = rng.gen_range(1..=6u32);
            let kt = rng.gen_range(1..=6u32);
            let predicted: Vec<u32> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
            let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..kt)).collect();
            let pair = LabelPair::new(&predicted, &truth).unwrap();
            let got = hungarian_accuracy(&pair);
            let want = brute_force_accuracy(&predicted, &truth);
            assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        }
    }

    #[test]
    fn purity_basics() {
        let truth = [0u32, 0, 1, 1];
        let pair = LabelPair::new(&truth, &truth).unwrap();
        assert_eq!(mean_max_purity(&pair), 100.0);

        // One cluster with truth classes (0, 0, 1) contributes 2/3.
        let predicted = [7u32, 7, 7];
        let truth = [0u32, 0, 1];
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        assert!((mean_max_purity(&pair) - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn purity_matches_histogram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 60;
        let predicted: Vec<u32> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        let got = mean_max_purity(&pair);

        let mut clusters: HashMap<u32, Vec<u32>> = HashMap::new();
        for (&p, &t) in predicted.iter().zip(&truth) {
            clusters.entry(p).or_default().push(t);
        }
        let want = clusters
            .values()
            .map(|members| {
                let mut hist = HashMap::new();
                for &t in members {
                    *hist.entry(t).or_insert(0usize) += 1;
                }
                *hist.values().max().unwrap() as f64 / members.len() as f64
            })
            .sum::<f64>()
            / clusters.len() as f64
            * 100.0;
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn metrics_invariant_under_sample_and_id_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 50;
        let predicted: Vec<u32> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pair = LabelPair::new(&predicted, &truth).unwrap();
        let base = (nmi(&pair), hungarian_accuracy(&pair), mean_max_purity(&pair));

        // Permute sample order.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let p2: Vec<u32> = order.iter().map(|&i| predicted[i]).collect();
        let t2: Vec<u32> = order.iter().map(|&i| truth[i]).collect();
        let pair2 = LabelPair::new(&p2, &t2).unwrap();

        // Relabel predicted ids by a fixed permutation.
        let relabel = [3u32, 0, 4, 1, 2];
        let p3: Vec<u32> = predicted.iter().map(|&v| relabel[v as usize]).collect();
        let pair3 = LabelPair::new(&p3, &truth).unwrap();

        for other in [pair2, pair3] {
            assert!((nmi(&other) - base.0).abs() < 1e-12);
            assert!((hungarian_accuracy(&other) - base.1).abs() < 1e-12);
            assert!((mean_max_purity(&other) - base.2).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_score_endpoints() {
        let z = [0.3, -1.0, 2.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((cosine_score(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_score(&z, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_score(&[1.0, 0.0], &[0.0, 5.0]).unwrap().abs() < 1e-12);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
