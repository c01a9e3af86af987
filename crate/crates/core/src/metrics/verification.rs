//! Trial scoring: equal error rate and minimum detection cost.

use crate::error::{Error, Result};

/// Detection cost parameters.
#[derive(Debug, Clone, Copy)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            c_miss: 1.0,
            c_fa: 1.0,
            p_target: 0.05,
        }
    }
}

/// ROC operating points `(fpr, tpr)` swept over every distinct score with
/// the accept-if-score-at-least-threshold convention, from (0,0) to (1,1).
fn roc_points(scores: &[f64], targets: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::config("scores/targets length mismatch"));
    }
    let num_target = targets.iter().filter(|&&t| t).count();
    let num_non = targets.len() - num_target;
    if num_target == 0 || num_non == 0 {
        return Err(Error::config("need at least one target and one non-target"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if targets[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / num_non as f64, tp as f64 / num_target as f64));
    }
    Ok(points)
}

/// Upper convex hull of the ROC staircase (monotone chain over points
/// already sorted by fpr then tpr).
fn roc_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it is on or below segment a->p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Equal error rate in percent: the crossing of the ROC convex hull with the
/// `fnr = fpr` diagonal, linearly interpolated between adjacent operating
/// points.
pub fn eer(scores: &[f64], targets: &[bool]) -> Result<f64> {
    let hull = roc_hull(&roc_points(scores, targets)?);
    for pair in hull.windows(2) {
        let (x1, y1) = pair[0];
        let (x2, y2) = pair[1];
        // Looking for fpr where tpr = 1 - fpr on this segment.
        if x2 == x1 {
            // Vertical segment at x1: crossing if 1-x1 lies within [y1, y2].
            let y = 1.0 - x1;
            if y1 <= y && y <= y2 {
                return Ok(x1 * 100.0);
            }
            continue;
        }
        let slope = (y2 - y1) / (x2 - x1);
        let intercept = y1 - slope * x1;
        let fpr = (1.0 - intercept) / (1.0 + slope);
        if fpr >= x1 - 1e-12 && fpr <= x2 + 1e-12 {
            return Ok(fpr.clamp(0.0, 1.0) * 100.0);
        }
    }
    // The diagonal always crosses the hull; reaching here means fp rounding
    // pushed the crossing past the last segment.
    Ok(50.0)
}

/// Minimum normalized detection cost over every threshold (including
/// accept-all and reject-all).
pub fn min_dcf(scores: &[f64], targets: &[bool], params: DcfParams) -> Result<f64> {
    let points = roc_points(scores, targets)?;
    let denom = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    if denom <= 0.0 {
        return Err(Error::config("degenerate detection cost parameters"));
    }
    let mut best = f64::INFINITY;
    for (fpr, tpr) in points {
        let p_miss = 1.0 - tpr;
        let cost = params.c_miss * p_miss * params.p_target
            + params.c_fa * fpr * (1.0 - params.p_target);
        best = best.min(cost / denom);
    }
    Ok(best)
}
