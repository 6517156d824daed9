//! Batch clustering: DBSCAN with noise labeling, a k-means baseline, and
//! the k-distance / grid-search tooling used to tune DBSCAN.

mod dbscan;
mod kmeans;
mod tuning;

pub use dbscan::{dbscan, DbscanParams};
pub use kmeans::{kmeans, kmeans_plus_plus, KMeansFit};
pub use tuning::{
    default_grid, grid_search, k_distance_profile, knee_value, write_score_table, GridCell, GridSearch, GridSearchConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NOISE: i64 = -1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("input contains a non-finite coordinate (point {0})")]
    NonFiniteInput(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("point {index} has {got} dimensions, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("no grid cell produced two or more clusters after noise filtering")]
    DegenerateGrid(Vec<GridCell>),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}

/// Per-point cluster labels, `-1` for noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    pub noise_fraction: f64,
}

impl ClusterAssignment {
    /// Derives `n_clusters` and `noise_fraction` from labels.
    pub fn from_labels(labels: Vec<i64>) -> Self {
        let mut distinct: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let noise = labels.iter().filter(|&&l| l < 0).count();
        let noise_fraction = if labels.is_empty() { 0.0 } else { noise as f64 / labels.len() as f64 };
        ClusterAssignment { n_clusters: distinct.len(), noise_fraction, labels }
    }

    pub fn is_noise(&self, i: usize) -> bool {
        self.labels[i] < 0
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Checks for an empty set, ragged dimensions and non-finite coordinates.
pub(crate) fn validate_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusterError> {
    let first = points.first().ok_or(ClusterError::EmptyInput)?;
    let dim = first.as_ref().len();
    for (index, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch { index, expected: dim, got: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFiniteInput(index));
        }
    }
    Ok(dim)
}
