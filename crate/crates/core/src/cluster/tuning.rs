use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dbscan, sq_dist, validate_points, ClusterError, DbscanParams};
use crate::metrics::{self, MetricError, SILHOUETTE_EXACT_LIMIT};

/// Distance from every point to its `k`-th nearest other point, sorted
/// descending.
pub fn k_distance_profile<P: AsRef<[f64]> + Sync>(points: &[P], k: usize) -> Result<Vec<f64>, ClusterError> {
    validate_points(points)?;
    let n = points.len();
    if k == 0 || k >= n {
        return Err(ClusterError::InvalidParams(format!("k must be in 1..{n}, got {k}")));
    }
    let mut out: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = points[i].as_ref();
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sq_dist(pi, points[j].as_ref())).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// Knee of a descending k-distance curve: the point farthest from the chord
/// joining its first and last values after normalizing both axes.
pub fn knee_value(profile: &[f64]) -> f64 {
    let n = profile.len();
    if n == 0 {
        return 0.0;
    }
    if n < 3 {
        return profile[n - 1];
    }
    let (hi, lo) = (profile[0], profile[n - 1]);
    let span = hi - lo;
    if span <= 0.0 {
        return hi;
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &y) in profile.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let yn = (y - lo) / span;
        // chord runs from (0, 1) to (1, 0); distance is proportional to 1 - x - yn
        let below = 1.0 - x - yn;
        if below > best.1 {
            best = (i, below);
        }
    }
    profile[best.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    pub min_pts: Vec<usize>,
    pub eps_multipliers: Vec<f64>,
    pub silhouette_sample: usize,
    pub seed: u64,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            min_pts: vec![3, 5, 10, 20],
            eps_multipliers: vec![0.5, 1.0, 2.0],
            silhouette_sample: SILHOUETTE_EXACT_LIMIT,
            seed: 0,
        }
    }
}

/// eps candidates at multiples of the k-distance knee (k = min_pts - 1) for
/// each min_pts. Settings whose knee is zero or which need more neighbors
/// than there are points are skipped.
pub fn default_grid<P: AsRef<[f64]> + Sync>(points: &[P], config: &GridSearchConfig) -> Result<Vec<DbscanParams>, ClusterError> {
    let mut grid = Vec::new();
    for &min_pts in &config.min_pts {
        let k = min_pts.saturating_sub(1).max(1);
        if k >= points.len() {
            continue;
        }
        let knee = knee_value(&k_distance_profile(points, k)?);
        if knee <= 0.0 {
            continue;
        }
        for &m in &config.eps_multipliers {
            grid.push(DbscanParams::new(knee * m, min_pts)?);
        }
    }
    Ok(grid)
}

/// One evaluated grid setting. NMI and silhouette are computed on non-noise
/// points only; silhouette is `None` when fewer than two clusters survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub eps: f64,
    pub min_pts: usize,
    pub nmi: f64,
    pub silhouette: Option<f64>,
    pub noise_pct: f64,
    pub n_clusters: usize,
}

impl GridCell {
    pub fn params(&self) -> DbscanParams {
        DbscanParams { eps: self.eps, min_pts: self.min_pts }
    }

    fn eligible(&self) -> bool {
        self.n_clusters >= 2
    }

    /// Better cells sort first: NMI desc, silhouette desc, noise asc.
    pub fn rank_cmp(&self, other: &GridCell) -> Ordering {
        other
            .nmi
            .total_cmp(&self.nmi)
            .then_with(|| other.silhouette.unwrap_or(-1.0).total_cmp(&self.silhouette.unwrap_or(-1.0)))
            .then_with(|| self.noise_pct.total_cmp(&other.noise_pct))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best: DbscanParams,
    pub best_index: usize,
    /// Cells in grid order.
    pub cells: Vec<GridCell>,
}

impl GridSearch {
    /// Indices of eligible cells, best first.
    pub fn ranking(&self) -> Vec<usize> {
        rank(&self.cells)
    }
}

fn rank(cells: &[GridCell]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].eligible()).collect();
    idx.sort_by(|&a, &b| cells[a].rank_cmp(&cells[b]).then(a.cmp(&b)));
    idx
}

fn evaluate_cell<P: AsRef<[f64]> + Sync, L: Ord + Sync>(
    points: &[P],
    truth: &[L],
    params: DbscanParams,
    config: &GridSearchConfig,
) -> Result<GridCell, ClusterError> {
    let assignment = dbscan(points, params)?;
    let kept: Vec<usize> = (0..points.len()).filter(|&i| !assignment.is_noise(i)).collect();
    let nmi = if kept.is_empty() {
        0.0
    } else {
        let pred: Vec<i64> = kept.iter().map(|&i| assignment.labels[i]).collect();
        let gold: Vec<&L> = kept.iter().map(|&i| &truth[i]).collect();
        metrics::nmi(&pred, &gold)?
    };
    let silhouette = match metrics::silhouette_sampled(points, &assignment.labels, config.silhouette_sample, config.seed) {
        Ok(s) => Some(s),
        Err(MetricError::SingleCluster) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(GridCell {
        eps: params.eps,
        min_pts: params.min_pts,
        nmi,
        silhouette,
        noise_pct: assignment.noise_fraction * 100.0,
        n_clusters: assignment.n_clusters,
    })
}

/// Evaluates every setting (in parallel) and picks the best by NMI after
/// noise filtering, then silhouette, then lower noise.
pub fn grid_search<P: AsRef<[f64]> + Sync, L: Ord + Sync>(
    points: &[P],
    truth: &[L],
    grid: &[DbscanParams],
    config: &GridSearchConfig,
) -> Result<GridSearch, ClusterError> {
    validate_points(points)?;
    if truth.len() != points.len() {
        return Err(MetricError::LengthMismatch(points.len(), truth.len()).into());
    }
    if grid.is_empty() {
        return Err(ClusterError::InvalidParams("empty grid".into()));
    }
    let cells = grid
        .par_iter()
        .map(|&p| evaluate_cell(points, truth, p, config))
        .collect::<Result<Vec<_>, _>>()?;
    match rank(&cells).first() {
        Some(&best_index) => Ok(GridSearch { best: cells[best_index].params(), best_index, cells }),
        None => Err(ClusterError::DegenerateGrid(cells)),
    }
}

pub fn write_score_table(w: impl Write, cells: &[GridCell]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["eps", "min_pts", "nmi", "silhouette", "noise_pct", "n_clusters"])?;
    for c in cells {
        wtr.write_record([
            c.eps.to_string(),
            c.min_pts.to_string(),
            c.nmi.to_string(),
            c.silhouette.map(|s| s.to_string()).unwrap_or_default(),
            c.noise_pct.to_string(),
            c.n_clusters.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
