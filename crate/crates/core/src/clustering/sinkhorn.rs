//! Entropically regularized balanced assignment via Sinkhorn-Knopp.
//!
//! Solves for `Q = diag(u) * exp(lambda*P) * diag(v)` on the transportation
//! polytope with uniform marginals `r = 1/K` (rows) and `c = 1/N` (columns).
//! All scaling runs in the log domain, so large `lambda * P` never overflows.

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Mat};
use crate::nn::ProbVector;

#[derive(Debug, Clone, Copy)]
pub struct SinkhornSolver {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    /// The transport plan, `K x N`.
    pub q: Mat,
    pub iterations: usize,
    /// `max(|Q*1 - r|, |Q^T*1 - c|)` at the last iteration.
    pub max_violation: f64,
    pub converged: bool,
}

impl SinkhornSolver {
    pub fn new(lambda: f64, max_iters: usize, tol: f64) -> Result<Self> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::config(format!("lambda {lambda} must be positive")));
        }
        Ok(SinkhornSolver {
            lambda,
            max_iters,
            tol,
        })
    }

    /// Alternating row/column rescaling until the worst marginal violation
    /// drops under `tol` or `max_iters` sweeps have run.
    pub fn solve(&self, p: &Mat) -> Result<SinkhornOutcome> {
        let k = p.rows();
        let n = p.cols();
        if k == 0 || n == 0 {
            return Err(Error::config("empty posterior matrix"));
        }
        if !p.all_finite() {
            return Err(Error::numerical("non-finite posterior matrix"));
        }
        let log_r = -(k as f64).ln();
        let log_c = -(n as f64).ln();
        // log Q = lambda*P + alpha (row) + beta (col)
        let mut alpha = vec![0.0_f64; k];
        let mut beta = vec![0.0_f64; n];
        let mut iterations = 0;
        let mut max_violation = f64::INFINITY;
        let mut converged = false;

        while iterations < self.max_iters {
            iterations += 1;
            for (row, a) in alpha.iter_mut().enumerate() {
                let lse = log_sum_exp(
                    (0..n).map(|i| self.lambda * p.get(row, i) + beta[i]),
                );
                *a = log_r - lse;
            }
            for (col, b) in beta.iter_mut().enumerate() {
                let lse = log_sum_exp(
                    (0..k).map(|row| self.lambda * p.get(row, col) + alpha[row]),
                );
                *b = log_c - lse;
            }
            max_violation = self.violation(p, &alpha, &beta);
            if max_violation < self.tol {
                converged = true;
                break;
            }
        }

        let mut q = Mat::zeros(k, n);
        for row in 0..k {
            for col in 0..n {
                q.set(
                    row,
                    col,
                    (self.lambda * p.get(row, col) + alpha[row] + beta[col]).exp(),
                );
            }
        }
        Ok(SinkhornOutcome {
            q,
            iterations,
            max_violation,
            converged,
        })
    }

    fn violation(&self, p: &Mat, alpha: &[f64], beta: &[f64]) -> f64 {
        let k = p.rows();
        let n = p.cols();
        let r = 1.0 / k as f64;
        let c = 1.0 / n as f64;
        let mut worst = 0.0_f64;
        let mut col_sums = vec![0.0_f64; n];
        for row in 0..k {
            let mut row_sum = 0.0;
            for col in 0..n {
                let q = (self.lambda * p.get(row, col) + alpha[row] + beta[col]).exp();
                row_sum += q;
                col_sums[col] += q;
            }
            worst = worst.max((row_sum - r).abs());
        }
        for s in col_sums {
            worst = worst.max((s - c).abs());
        }
        worst
    }
}

/// Hard labels from a transport plan: per-column argmax, ties toward the
/// smallest row index.
pub fn plan_labels(q: &Mat) -> Vec<u32> {
    (0..q.cols())
        .map(|col| {
            let mut best = 0u32;
            let mut best_v = f64::NEG_INFINITY;
            for row in 0..q.rows() {
                let v = q.get(row, col);
                if v > best_v {
                    best_v = v;
                    best = row as u32;
                }
            }
            best
        })
        .collect()
}

/// Accumulates teacher posteriors over `M` batches; a flush hands the stacked
/// `K x width` matrix (columns scaled by `1/width`) to the Sinkhorn solver.
#[derive(Debug, Clone)]
pub struct PosteriorBuffer {
    k: usize,
    batches_per_flush: usize,
    columns: Vec<Vec<f64>>,
    sample_indices: Vec<usize>,
    batches: usize,
}

impl PosteriorBuffer {
    pub fn new(k: usize, batches_per_flush: usize, batch_size: usize) -> Result<Self> {
        if batches_per_flush == 0 || batch_size == 0 {
            return Err(Error::config("M and B must be positive"));
        }
        if batches_per_flush * batch_size <= k {
            return Err(Error::config(format!(
                "M*B = {} must exceed K = {k}",
                batches_per_flush * batch_size
            )));
        }
        Ok(PosteriorBuffer {
            k,
            batches_per_flush,
            columns: Vec::new(),
            sample_indices: Vec::new(),
            batches: 0,
        })
    }

    /// Appends one batch of posteriors; returns true when `M` batches have
    /// accumulated and the buffer is ready to flush.
    pub fn push_batch(&mut self, posteriors: &[ProbVector], indices: &[usize]) -> Result<bool> {
        if posteriors.len() != indices.len() {
            return Err(Error::config("posterior/index length mismatch"));
        }
        for (p, &idx) in posteriors.iter().zip(indices) {
            if p.len() != self.k {
                return Err(Error::config("posterior has wrong cluster count"));
            }
            self.columns.push(p.values().to_vec());
            self.sample_indices.push(idx);
        }
        self.batches += 1;
        Ok(self.batches >= self.batches_per_flush)
    }

    pub fn is_ready(&self) -> bool {
        self.batches >= self.batches_per_flush
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.k
    }

    /// Drains the buffer into a scaled `K x width` matrix plus the global
    /// sample ids in accumulation order.
    pub fn take(&mut self) -> (Mat, Vec<usize>) {
        let width = self.columns.len();
        let mut p = Mat::zeros(self.k, width);
        let scale = 1.0 / width as f64;
        for (col, probs) in self.columns.iter().enumerate() {
            for (row, &v) in probs.iter().enumerate() {
                p.set(row, col, v * scale);
            }
        }
        let indices = std::mem::take(&mut self.sample_indices);
        self.columns.clear();
        self.batches = 0;
        (p, indices)
    }
}
