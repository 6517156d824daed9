//! Evaluation arithmetic: NMI, Silhouette, novel-device Purity/Share and
//! post-adaptation known-device accuracy.

mod report;

pub use report::{EvaluationReport, Provenance, REPORT_COLUMNS};

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::dist;

/// Above this many points silhouette is estimated on a seeded sample.
pub const SILHOUETTE_EXACT_LIMIT: usize = 5000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("silhouette needs at least two non-noise clusters")]
    SingleCluster,
    #[error("no known-device points to evaluate")]
    EmptyEvaluationSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of both entropies.
///
/// Two constant labelings score 1; one constant against a non-constant
/// labeling scores 0.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = a.len() as f64;
    let mut ia: BTreeMap<&A, usize> = BTreeMap::new();
    let mut ib: BTreeMap<&B, usize> = BTreeMap::new();
    for x in a {
        let next = ia.len();
        ia.entry(x).or_insert(next);
    }
    for y in b {
        let next = ib.len();
        ib.entry(y).or_insert(next);
    }
    let (ka, kb) = (ia.len(), ib.len());
    let mut table = vec![0usize; ka * kb];
    let mut ra = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (x, y) in a.iter().zip(b) {
        let (i, j) = (ia[x], ib[y]);
        table[i * kb + j] += 1;
        ra[i] += 1;
        cb[j] += 1;
    }
    let ha = entropy(ra.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let nij = table[i * kb + j];
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (ra[i] as f64 * cb[j] as f64)).ln();
        }
    }
    let score = mi.max(0.0) / ((ha + hb) / 2.0);
    Ok(score.clamp(0.0, 1.0))
}

/// Mean silhouette over non-noise points (`label < 0` is noise).
///
/// Singleton clusters contribute 0. Exact O(n²) evaluation.
pub fn silhouette<P: AsRef<[f64]> + Sync>(points: &[P], labels: &[i64]) -> Result<f64, MetricError> {
    if points.len() != labels.len() {
        return Err(MetricError::LengthMismatch(points.len(), labels.len()));
    }
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    silhouette_subset(points, labels, &kept)
}

/// As [`silhouette`], but above `max_points` non-noise points the score is
/// computed on a uniform sample of `max_points` of them drawn with `seed`.
pub fn silhouette_sampled<P: AsRef<[f64]> + Sync>(
    points: &[P],
    labels: &[i64],
    max_points: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    if points.len() != labels.len() {
        return Err(MetricError::LengthMismatch(points.len(), labels.len()));
    }
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    if kept.len() <= max_points {
        return silhouette_subset(points, labels, &kept);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, kept.len(), max_points).into_iter().map(|i| kept[i]).collect();
    picked.sort_unstable();
    silhouette_subset(points, labels, &picked)
}

fn silhouette_subset<P: AsRef<[f64]> + Sync>(points: &[P], labels: &[i64], idx: &[usize]) -> Result<f64, MetricError> {
    let mut slot: BTreeMap<i64, usize> = BTreeMap::new();
    for &i in idx {
        let next = slot.len();
        slot.entry(labels[i]).or_insert(next);
    }
    if slot.len() < 2 {
        return Err(MetricError::SingleCluster);
    }
    let k = slot.len();
    let member: Vec<usize> = idx.iter().map(|&i| slot[&labels[i]]).collect();
    let mut sizes = vec![0usize; k];
    for &m in &member {
        sizes[m] += 1;
    }
    let scores: Vec<f64> = (0..idx.len())
        .into_par_iter()
        .map(|a| {
            let own = member[a];
            if sizes[own] == 1 {
                return 0.0;
            }
            let pa = points[idx[a]].as_ref();
            let mut sums = vec![0.0; k];
            for (b, &i) in idx.iter().enumerate() {
                if a != b {
                    sums[member[b]] += dist(pa, points[i].as_ref());
                }
            }
            let intra = sums[own] / (sizes[own] - 1) as f64;
            let nearest = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = intra.max(nearest);
            if denom > 0.0 {
                (nearest - intra) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Novel/known membership counts per subcluster with the derived Purity and
/// Share of one novel device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyEvaluation {
    /// subcluster id -> (n_novel, n_known)
    pub counts: BTreeMap<usize, (u64, u64)>,
    /// Subclusters whose local purity meets the threshold.
    pub valid: Vec<usize>,
    pub purity_threshold: f64,
    pub n_total: u64,
    pub purity: f64,
    pub share: f64,
}

impl NoveltyEvaluation {
    pub fn local_purity(&self, c: usize) -> Option<f64> {
        self.counts.get(&c).map(|&(nov, known)| if nov + known == 0 { 0.0 } else { nov as f64 / (nov + known) as f64 })
    }
}

/// Purity and Share of a novel device from subcluster assignments.
///
/// Purity = Σ_valid (novel/(novel+known))·novel / Σ_valid novel and
/// Share = Σ_valid novel / `n_total`, where a subcluster is valid when its
/// novel fraction is at least `purity_threshold`. No valid subcluster gives
/// (0, 0).
pub fn novelty_eval(
    assignments: &[usize],
    is_novel: &[bool],
    purity_threshold: f64,
    n_total: u64,
) -> Result<NoveltyEvaluation, MetricError> {
    if assignments.len() != is_novel.len() {
        return Err(MetricError::LengthMismatch(assignments.len(), is_novel.len()));
    }
    let mut counts: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for (&c, &novel) in assignments.iter().zip(is_novel) {
        let e = counts.entry(c).or_insert((0, 0));
        if novel {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    novelty_eval_counts(counts, purity_threshold, n_total)
}

/// [`novelty_eval`] on pre-tallied `(n_novel, n_known)` counts.
pub fn novelty_eval_counts(
    counts: BTreeMap<usize, (u64, u64)>,
    purity_threshold: f64,
    n_total: u64,
) -> Result<NoveltyEvaluation, MetricError> {
    if n_total == 0 {
        return Err(MetricError::InvalidArgument("N_total must be at least 1".into()));
    }
    if !(purity_threshold > 0.0 && purity_threshold <= 1.0) {
        return Err(MetricError::InvalidArgument(format!("purity threshold {purity_threshold} outside (0, 1]")));
    }
    let mut valid = Vec::new();
    let mut weighted = 0.0;
    let mut captured = 0u64;
    for (&c, &(nov, known)) in &counts {
        if nov == 0 {
            continue;
        }
        let local = nov as f64 / (nov + known) as f64;
        if local >= purity_threshold {
            valid.push(c);
            weighted += local * nov as f64;
            captured += nov;
        }
    }
    let (purity, share) = if captured == 0 {
        (0.0, 0.0)
    } else {
        (weighted / captured as f64, (captured as f64 / n_total as f64).min(1.0))
    };
    Ok(NoveltyEvaluation { counts, valid, purity_threshold, n_total, purity, share })
}

/// Majority truth label per cluster; ties go to the smallest label.
pub fn majority_map<L: Ord + Clone>(assignments: &[usize], truth: &[L]) -> BTreeMap<usize, L> {
    let mut tallies: BTreeMap<usize, BTreeMap<&L, u64>> = BTreeMap::new();
    for (&c, l) in assignments.iter().zip(truth) {
        *tallies.entry(c).or_default().entry(l).or_insert(0) += 1;
    }
    tallies
        .into_iter()
        .map(|(c, t)| {
            let mut best: Option<(&L, u64)> = None;
            for (l, n) in t {
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((l, n));
                }
            }
            (c, best.expect("non-empty tally").0.clone())
        })
        .collect()
}

/// Fraction of known-device points whose cluster maps to their true label.
/// Points in clusters absent from `baseline_map` count as wrong.
pub fn known_accuracy_post<L: Ord>(
    baseline_map: &BTreeMap<usize, L>,
    assignments: &[usize],
    truth: &[L],
) -> Result<f64, MetricError> {
    if assignments.len() != truth.len() {
        return Err(MetricError::LengthMismatch(assignments.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::EmptyEvaluationSet);
    }
    let correct = assignments.iter().zip(truth).filter(|(c, t)| baseline_map.get(c) == Some(*t)).count();
    Ok(correct as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmi_permuted_partition_is_one() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn nmi_constant_labeling_is_zero() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(nmi(&[5, 5], &["x", "x"]).unwrap(), 1.0);
    }

    #[test]
    fn nmi_hand_table() {
        // contingency [[2,0],[0... ]]: a = [0,0,1,1], b = [0,1,1,1]
        // H(a) = ln 2; H(b) = -(1/4 ln 1/4 + 3/4 ln 3/4)
        // MI = 1/4 ln(4·1/(2·1)) + 1/4 ln(4·1/(2·3)) + 1/2 ln(4·2/(2·3))
        let ha = 2f64.ln();
        let hb = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let mi = 0.25 * 2f64.ln() + 0.25 * (4.0f64 / 6.0).ln() + 0.5 * (8.0f64 / 6.0).ln();
        let expect = mi / ((ha + hb) / 2.0);
        let got = nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        assert!(matches!(nmi(&[0], &[0, 1]), Err(MetricError::LengthMismatch(1, 2))));
    }

    #[test]
    fn silhouette_two_far_pairs() {
        let p = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        assert_eq!(silhouette(&p, &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn silhouette_requires_two_clusters() {
        let p = vec![vec![0.0], vec![1.0], vec![9.0]];
        assert_eq!(silhouette(&p, &[0, 0, -1]), Err(MetricError::SingleCluster));
        // singleton rule: the lone point in cluster 1 scores 0
        let s = silhouette(&p, &[0, 0, 1]).unwrap();
        let a0 = 1.0;
        let b0 = 9.0;
        let a1 = 1.0;
        let b1 = 8.0;
        let expect = ((b0 - a0) / b0 + (b1 - a1) / b1 + 0.0) / 3.0;
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn silhouette_sampling_is_seeded() {
        let p: Vec<Vec<f64>> = (0..300).map(|i| vec![(i % 3) as f64 * 10.0 + (i as f64 * 0.01)]).collect();
        let l: Vec<i64> = (0..300).map(|i| (i % 3) as i64).collect();
        let a = silhouette_sampled(&p, &l, 100, 7).unwrap();
        assert_eq!(a, silhouette_sampled(&p, &l, 100, 7).unwrap());
        assert_eq!(silhouette_sampled(&p, &l, 1000, 7).unwrap(), silhouette(&p, &l).unwrap());
    }

    #[test]
    fn purity_share_worked_example() {
        let counts = BTreeMap::from([(1, (8, 2)), (2, (5, 5))]);
        let ev = novelty_eval_counts(counts, 0.8, 20).unwrap();
        assert_eq!(ev.valid, vec![1]);
        assert!((ev.purity - 0.8).abs() < 1e-15);
        assert!((ev.share - 0.4).abs() < 1e-15);
        assert_eq!(ev.local_purity(2), Some(0.5));
    }

    #[test]
    fn perfect_isolation_and_empty_valid_set() {
        let ev = novelty_eval(&[0, 0, 1, 2], &[true, true, true, false], 0.8, 3).unwrap();
        assert_eq!((ev.purity, ev.share), (1.0, 1.0));
        let ev = novelty_eval(&[0, 0, 0], &[true, false, false], 0.8, 1).unwrap();
        assert_eq!((ev.purity, ev.share), (0.0, 0.0));
        assert!(ev.valid.is_empty());
        assert!(novelty_eval(&[0], &[true], 0.0, 1).is_err());
        assert!(novelty_eval(&[0], &[true], 0.8, 0).is_err());
    }

    #[test]
    fn known_accuracy_counting() {
        let map = BTreeMap::from([(0usize, "cam"), (1, "plug")]);
        let acc = known_accuracy_post(&map, &[0, 0, 1, 1, 2], &["cam", "plug", "plug", "plug", "cam"]).unwrap();
        assert!((acc - 3.0 / 5.0).abs() < 1e-15);
        assert_eq!(known_accuracy_post(&map, &[7, 8], &["cam", "plug"]).unwrap(), 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(known_accuracy_post(&map, &[], &empty), Err(MetricError::EmptyEvaluationSet));
    }

    #[test]
    fn majority_map_tie_goes_to_smallest() {
        let m = majority_map(&[0, 0, 1, 1, 1], &["b", "a", "c", "c", "a"]);
        assert_eq!(m[&0], "a");
        assert_eq!(m[&1], "c");
    }

    #[test]
    fn baseline_reassessed_is_perfect() {
        let assign = [0, 0, 1, 2, 2];
        let truth = ["x", "x", "y", "z", "z"];
        let map = majority_map(&assign, &truth);
        assert_eq!(known_accuracy_post(&map, &assign, &truth).unwrap(), 1.0);
    }
}
