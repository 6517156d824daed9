use serde::{Deserialize, Serialize};

use super::{sq_dist, validate_points, ClusterAssignment, ClusterError, NOISE};

/// `min_pts` counts the point itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self, ClusterError> {
        let p = DbscanParams { eps, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ClusterError::InvalidParams(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts < 1 {
            return Err(ClusterError::InvalidParams("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

const UNCLASSIFIED: i64 = i64::MIN;

/// Density-based clustering under Euclidean distance with `dist <= eps`.
///
/// Clusters are numbered in order of their lowest-index core point, so a
/// border point reachable from several clusters joins the lowest id.
/// Neighborhoods are exact O(n²) scans; the call is single-threaded.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], params: DbscanParams) -> Result<ClusterAssignment, ClusterError> {
    params.validate()?;
    validate_points(points)?;
    let n = points.len();
    let eps2 = params.eps * params.eps;

    // self included
    let mut counts = vec![1usize; n];
    for i in 0..n {
        let pi = points[i].as_ref();
        for j in (i + 1)..n {
            if sq_dist(pi, points[j].as_ref()) <= eps2 {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    let core: Vec<bool> = counts.iter().map(|&c| c >= params.min_pts).collect();

    let mut labels = vec![UNCLASSIFIED; n];
    let mut stack = Vec::new();
    let mut next_id = 0i64;
    for seed in 0..n {
        if labels[seed] != UNCLASSIFIED || !core[seed] {
            continue;
        }
        labels[seed] = next_id;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            let pp = points[p].as_ref();
            for q in 0..n {
                if labels[q] == UNCLASSIFIED && sq_dist(pp, points[q].as_ref()) <= eps2 {
                    labels[q] = next_id;
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next_id += 1;
    }
    for l in labels.iter_mut() {
        if *l == UNCLASSIFIED {
            *l = NOISE;
        }
    }
    Ok(ClusterAssignment::from_labels(labels))
}
