use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, validate_points, ClusterAssignment, ClusterError};

const MAX_ITER: usize = 300;
const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: ClusterAssignment,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// k-means++ seeding: first center uniform, then D²-weighted sampling.
pub fn kmeans_plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), points[first].as_ref())).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), points[next].as_ref()));
        }
    }
    chosen.into_iter().map(|i| points[i].as_ref().to_vec()).collect()
}

pub(crate) fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from a seeded k-means++ start until every centroid moves
/// less than 1e-6 or 300 iterations have run.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<KMeansFit, ClusterError> {
    let dim = validate_points(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidParams(format!("k must be in 1..={n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(&centroids, p.as_ref());
            *l = c;
            inertia += d;
        }
        history.push(inertia);
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift < SHIFT_TOL || iterations >= MAX_ITER {
            break;
        }
    }

    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(&centroids, p.as_ref());
        *l = c;
        inertia += d;
    }
    let assignment = ClusterAssignment::from_labels(labels.into_iter().map(|l| l as i64).collect());
    Ok(KMeansFit { assignment, centroids, inertia, inertia_history: history, iterations })
}
