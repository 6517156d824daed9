//! Incremental clustering for streaming adaptation: a CF tree (BIRCH) and
//! mini-batch k-means behind one update interface, with wall-clock timing.

mod cftree;
mod minibatch;

pub use cftree::{ClusteringFeature, CfTree, CfTreeParams, InsertOutcome, TreeAudit, RADIUS_SQ_TOLERANCE};
pub use minibatch::MiniBatchKMeans;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("point has {got} dimensions, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate in input")]
    NonFiniteInput,
    #[error("model has no clusters yet")]
    EmptyModel,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub points_absorbed: u64,
    pub new_subclusters: u64,
    /// Wall seconds around the update; zero unless measured by [`timed_update`].
    pub elapsed: f64,
    pub splits: u64,
}

/// A clusterer that can absorb batches and label points between updates.
pub trait IncrementalModel {
    fn partial_fit(&mut self, batch: &[Vec<f64>]) -> Result<UpdateStats, StreamError>;
    /// Cluster (or subcluster) id of the nearest prototype.
    fn predict(&self, p: &[f64]) -> Result<usize, StreamError>;
    fn n_clusters(&self) -> usize;
}

pub(crate) fn check_batch(batch: &[Vec<f64>], dim: Option<usize>) -> Result<(), StreamError> {
    let dim = dim.unwrap_or_else(|| batch[0].len());
    for p in batch {
        if p.len() != dim {
            return Err(StreamError::DimensionMismatch { expected: dim, got: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(StreamError::NonFiniteInput);
        }
    }
    Ok(())
}

impl IncrementalModel for CfTree {
    fn partial_fit(&mut self, batch: &[Vec<f64>]) -> Result<UpdateStats, StreamError> {
        if batch.is_empty() {
            return Err(StreamError::EmptyBatch);
        }
        check_batch(batch, self.dim())?;
        let mut stats = UpdateStats::default();
        for p in batch {
            let o = self.insert(p)?;
            stats.points_absorbed += 1;
            stats.new_subclusters += u64::from(o.new_subcluster);
            stats.splits += o.splits as u64;
        }
        Ok(stats)
    }

    fn predict(&self, p: &[f64]) -> Result<usize, StreamError> {
        self.assign(p)
    }

    fn n_clusters(&self) -> usize {
        self.n_leaves()
    }
}

/// Runs one update and records its wall time (no I/O inside the timer).
pub fn timed_update<M: IncrementalModel + ?Sized>(model: &mut M, batch: &[Vec<f64>]) -> Result<UpdateStats, StreamError> {
    if batch.is_empty() {
        return Err(StreamError::EmptyBatch);
    }
    let start = Instant::now();
    let mut stats = model.partial_fit(batch)?;
    stats.elapsed = start.elapsed().as_secs_f64();
    Ok(stats)
}

/// Fits a fresh model on all `points` in `batch_size` chunks and returns it
/// with the total wall time.
pub fn refit_baseline<M: IncrementalModel>(
    make: impl FnOnce() -> Result<M, StreamError>,
    points: &[Vec<f64>],
    batch_size: usize,
) -> Result<(M, f64), StreamError> {
    if points.is_empty() {
        return Err(StreamError::EmptyBatch);
    }
    let start = Instant::now();
    let mut model = make()?;
    for chunk in points.chunks(batch_size.max(1)) {
        model.partial_fit(chunk)?;
    }
    Ok((model, start.elapsed().as_secs_f64()))
}

pub const SNAPSHOT_FORMAT: &str = "flowprofiler-cftree-v1";

/// JSON model snapshot: parameters, scaler hash, leaves as `{n, ls, ss}`, and
/// the full tree so updates can resume after reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfTreeSnapshot {
    pub format: String,
    pub threshold: f64,
    pub branching_factor: usize,
    pub scaler_hash: String,
    pub leaves: Vec<ClusteringFeature>,
    pub tree: CfTree,
}

impl CfTreeSnapshot {
    pub fn new(tree: &CfTree, scaler_hash: impl Into<String>) -> Self {
        CfTreeSnapshot {
            format: SNAPSHOT_FORMAT.into(),
            threshold: tree.params().threshold,
            branching_factor: tree.params().branching_factor,
            scaler_hash: scaler_hash.into(),
            leaves: tree.leaves().to_vec(),
            tree: tree.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, StreamError> {
        let snap: CfTreeSnapshot = serde_json::from_str(s).map_err(|e| StreamError::Snapshot(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(StreamError::Snapshot(format!("unknown format {:?}", snap.format)));
        }
        if snap.leaves != snap.tree.leaves() {
            return Err(StreamError::Snapshot("leaf list disagrees with tree".into()));
        }
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos() * 2.0, (i % 7) as f64 * 0.1]).collect()
    }

    #[test]
    fn timed_update_records_elapsed() {
        let mut t = CfTree::new(CfTreeParams::default()).unwrap();
        let stats = timed_update(&mut t, &points(64)).unwrap();
        assert_eq!(stats.points_absorbed, 64);
        assert!(stats.elapsed > 0.0);
        assert!(matches!(timed_update(&mut t, &[]), Err(StreamError::EmptyBatch)));
    }

    #[test]
    fn refit_matches_incremental_root() {
        let p = points(500);
        let (model, secs) = refit_baseline(|| CfTree::new(CfTreeParams { threshold: 0.3, branching_factor: 8 }), &p, 64).unwrap();
        assert!(secs > 0.0);
        assert_eq!(model.points_inserted(), 500);
        assert!(model.audit().ok());
    }

    #[test]
    fn snapshot_reload_reproduces_assignments() {
        let p = points(400);
        let mut t = CfTree::new(CfTreeParams { threshold: 0.25, branching_factor: 6 }).unwrap();
        t.partial_fit(&p).unwrap();
        let json = CfTreeSnapshot::new(&t, "abc").to_json();
        let back = CfTreeSnapshot::from_json(&json).unwrap();
        assert_eq!(back.tree, t);
        assert_eq!(back.scaler_hash, "abc");
        let probes = points(50).into_iter().map(|v| v.iter().map(|x| x * 1.3 + 0.01).collect::<Vec<f64>>());
        for q in probes {
            assert_eq!(back.tree.assign(&q).unwrap(), t.assign(&q).unwrap());
        }
        assert!(CfTreeSnapshot::from_json("{}").is_err());
    }
}
