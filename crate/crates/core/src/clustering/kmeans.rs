//! Lloyd's algorithm with k-means++ seeding, deterministic under a seed.

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Mat};
use crate::par;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct ClusterModel {
    /// `K x D` centroid matrix.
    pub centroids: Mat,
    /// Cluster id per input point.
    pub assignment: Vec<u32>,
    /// Sum of squared distances to assigned centroids after the last step.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_history: Vec<f64>,
}

/// Independent k-means++ restarts; the run with the lowest final inertia
/// wins. Keeps single-seed determinism while avoiding bad local optima.
const RESTARTS: u64 = 4;

/// Lloyd's k-means. Empty clusters are re-seeded from the point farthest
/// from its centroid. Ties in assignment go to the smallest cluster index.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<ClusterModel> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::config(format!(
            "kmeans needs at least k={k} points, got {n}"
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::config("kmeans points must share a positive dim"));
    }
    let mut best: Option<ClusterModel> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart);
        let model = lloyd(points, k, max_iters, &mut rng);
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.unwrap())
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> ClusterModel {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids = plus_plus_seeding(points, k, rng);
    let mut assignment = vec![0u32; n];
    let mut inertia_history = Vec::new();
    let mut inertia = f64::INFINITY;

    for _ in 0..max_iters.max(1) {
        // Assignment step.
        let assigned: Vec<(u32, f64)> = par::map_indexed(points, |_, p| nearest(&centroids, p));
        let changed = assigned
            .iter()
            .zip(&assignment)
            .any(|((new, _), old)| new != old);
        let new_inertia: f64 = assigned.iter().map(|(_, d)| d).sum();
        assignment = assigned.iter().map(|(c, _)| *c).collect();
        inertia = new_inertia;
        inertia_history.push(inertia);
        if !changed && inertia_history.len() > 1 {
            break;
        }

        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c as usize] += 1;
            for (s, v) in sums[c as usize].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids.set(c, j, s / counts[c] as f64);
                }
            }
        }
        // Re-seed empty clusters from the farthest point.
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        let mut taken = Vec::new();
        for c in empty {
            let far = farthest_point(points, &centroids, &assignment, &taken);
            taken.push(far);
            for (j, v) in points[far].iter().enumerate() {
                centroids.set(c, j, *v);
            }
        }
    }

    ClusterModel {
        centroids,
        assignment,
        inertia,
        inertia_history,
    }
}

fn nearest(centroids: &Mat, p: &[f64]) -> (u32, f64) {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(row, p);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Mat {
    let dim = points[0].len();
    let mut centroids = Mat::zeros(k, dim);
    let first = rng.gen_range(0..points.len());
    centroids.row_mut(0).copy_from_slice(&points[first]);

    let mut dists: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[first]))
        .collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total <= 0.0 {
            // All remaining points coincide with existing centroids.
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dists.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(c).copy_from_slice(&points[pick]);
        for (d, p) in dists.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

fn farthest_point(
    points: &[Vec<f64>],
    centroids: &Mat,
    assignment: &[u32],
    taken: &[usize],
) -> usize {
    let mut best = 0;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        if taken.contains(&i) {
            continue;
        }
        let d = squared_distance(p, centroids.row(assignment[i] as usize));
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
