//! Initial k-means pseudo-labeling and both online clustering mechanisms
//! (direct argmax and batched Sinkhorn-Knopp optimal transport).

mod kmeans;
mod sinkhorn;

pub use kmeans::{kmeans, ClusterModel};
pub use sinkhorn::{plan_labels, PosteriorBuffer, SinkhornOutcome, SinkhornSolver};

use crate::error::Result;
use crate::linalg;
use crate::nn::ProbVector;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

/// Index of the highest-probability cluster, ties toward the smallest index.
pub fn argmax_assign(p: &ProbVector) -> u32 {
    linalg::argmax(p.values()) as u32
}

/// Number of clusters that currently own at least one sample.
pub fn active_cluster_count(labels: &[u32]) -> usize {
    labels.iter().collect::<HashSet<_>>().len()
}

/// Plain-text assignment dump: one `global_index,cluster_id` line per sample.
pub fn write_assignments(path: &Path, labels: &[u32]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, label) in labels.iter().enumerate() {
        writeln!(file, "{i},{label}")?;
    }
    file.flush()?;
    Ok(())
}
