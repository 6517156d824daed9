use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IncrementalModel, StreamError, UpdateStats};
use crate::cluster::{kmeans_plus_plus, sq_dist};

/// Mini-batch k-means with per-centroid learning rate `1 / count`.
///
/// The first batch seeds `k` centroids by k-means++; every batch (the first
/// included) is then assigned against the centroids as they stood at the
/// start of the batch and applied point by point.
#[derive(Debug, Clone)]
pub struct MiniBatchKMeans {
    k: usize,
    rng: ChaCha8Rng,
    centroids: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl MiniBatchKMeans {
    pub fn new(k: usize, seed: u64) -> Result<Self, StreamError> {
        if k == 0 {
            return Err(StreamError::InvalidParams("k must be at least 1".into()));
        }
        Ok(MiniBatchKMeans { k, rng: ChaCha8Rng::seed_from_u64(seed), centroids: Vec::new(), counts: Vec::new() })
    }

    /// Starts from given centroids with zero counts.
    pub fn with_centroids(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self, StreamError> {
        let mut m = Self::new(centroids.len(), seed)?;
        m.counts = vec![0; centroids.len()];
        m.centroids = centroids;
        Ok(m)
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn nearest(&self, p: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }
}

impl IncrementalModel for MiniBatchKMeans {
    fn partial_fit(&mut self, batch: &[Vec<f64>]) -> Result<UpdateStats, StreamError> {
        if batch.is_empty() {
            return Err(StreamError::EmptyBatch);
        }
        super::check_batch(batch, self.centroids.first().map(Vec::len))?;
        let mut stats = UpdateStats { points_absorbed: batch.len() as u64, ..Default::default() };
        if self.centroids.is_empty() {
            if batch.len() < self.k {
                return Err(StreamError::InvalidParams(format!(
                    "first batch has {} points, need at least k = {}",
                    batch.len(),
                    self.k
                )));
            }
            self.centroids = kmeans_plus_plus(batch, self.k, &mut self.rng);
            self.counts = vec![0; self.k];
            stats.new_subclusters = self.k as u64;
        }
        let assigned: Vec<usize> = batch.iter().map(|p| self.nearest(p)).collect();
        for (p, c) in batch.iter().zip(assigned) {
            self.counts[c] += 1;
            let lr = 1.0 / self.counts[c] as f64;
            for (m, x) in self.centroids[c].iter_mut().zip(p) {
                *m += lr * (x - *m);
            }
        }
        Ok(stats)
    }

    fn predict(&self, p: &[f64]) -> Result<usize, StreamError> {
        if self.centroids.is_empty() {
            return Err(StreamError::EmptyModel);
        }
        Ok(self.nearest(p))
    }

    fn n_clusters(&self) -> usize {
        self.centroids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_mean_update() {
        let mut m = MiniBatchKMeans::with_centroids(vec![vec![0.0]], 0).unwrap();
        m.partial_fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(m.centroids()[0], vec![1.0]);
        assert_eq!(m.counts()[0], 2);
    }

    #[test]
    fn batch_at_centroid_is_a_fixed_point() {
        let c = vec![1.5, -2.0];
        let mut m = MiniBatchKMeans::with_centroids(vec![c.clone(), vec![10.0, 10.0]], 0).unwrap();
        m.partial_fit(&vec![c.clone(); 8]).unwrap();
        assert_eq!(m.centroids()[0], c);
        assert_eq!(m.centroids()[1], vec![10.0, 10.0]);
    }

    #[test]
    fn counts_track_points_and_centroids_stay_in_hull() {
        let batch: Vec<Vec<f64>> = (0..32).map(|i| vec![(i % 8) as f64, (i / 8) as f64 * 3.0]).collect();
        let mut m = MiniBatchKMeans::new(3, 11).unwrap();
        for _ in 0..5 {
            m.partial_fit(&batch).unwrap();
        }
        assert_eq!(m.counts().iter().sum::<u64>(), 160);
        for c in m.centroids() {
            assert!((0.0..=7.0).contains(&c[0]) && (0.0..=9.0).contains(&c[1]), "{c:?}");
        }
        let a = m.predict(&[0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&[0.1, 0.0]).unwrap(), a);
    }

    #[test]
    fn errors() {
        let mut m = MiniBatchKMeans::new(4, 0).unwrap();
        assert!(matches!(m.partial_fit(&[]), Err(StreamError::EmptyBatch)));
        assert!(matches!(m.predict(&[0.0]), Err(StreamError::EmptyModel)));
        assert!(m.partial_fit(&vec![vec![0.0]; 2]).is_err());
        assert!(MiniBatchKMeans::new(0, 0).is_err());
    }
}
