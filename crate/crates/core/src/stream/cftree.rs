//! Clustering Feature tree (BIRCH phase 1) with a single-linkage global step.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::StreamError;
use crate::cluster::sq_dist;

/// Slack on squared radii; absorbs float rounding in `ss/n - |ls/n|^2`.
pub const RADIUS_SQ_TOLERANCE: f64 = 1e-9;

/// `(n, ls, ss)` summary of a point set: count, linear sum, sum of squared norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringFeature {
    pub n: u64,
    pub ls: Vec<f64>,
    pub ss: f64,
}

impl ClusteringFeature {
    pub fn empty(dim: usize) -> Self {
        ClusteringFeature { n: 0, ls: vec![0.0; dim], ss: 0.0 }
    }

    pub fn from_point(p: &[f64]) -> Self {
        ClusteringFeature { n: 1, ls: p.to_vec(), ss: p.iter().map(|x| x * x).sum() }
    }

    pub fn add_point(&mut self, p: &[f64]) {
        self.n += 1;
        for (s, x) in self.ls.iter_mut().zip(p) {
            *s += x;
        }
        self.ss += p.iter().map(|x| x * x).sum::<f64>();
    }

    pub fn merge(&mut self, other: &ClusteringFeature) {
        self.n += other.n;
        for (s, x) in self.ls.iter_mut().zip(&other.ls) {
            *s += x;
        }
        self.ss += other.ss;
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.ls.iter().map(|s| s / n).collect()
    }

    /// `ss/n - |ls/n|^2` before clamping.
    pub fn raw_radius_sq(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let c2: f64 = self.ls.iter().map(|s| (s / n) * (s / n)).sum();
        self.ss / n - c2
    }

    pub fn radius(&self) -> f64 {
        self.raw_radius_sq().max(0.0).sqrt()
    }

    fn radius_sq_with(&self, p: &[f64]) -> f64 {
        let mut merged = self.clone();
        merged.add_point(p);
        merged.raw_radius_sq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfTreeParams {
    /// Maximum subcluster radius.
    pub threshold: f64,
    /// Maximum entries per node.
    pub branching_factor: usize,
}

impl Default for CfTreeParams {
    fn default() -> Self {
        CfTreeParams { threshold: 0.5, branching_factor: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NodeKind {
    /// Subcluster ids.
    Leaf(Vec<usize>),
    /// Child node ids.
    Internal(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    cf: ClusteringFeature,
    kind: NodeKind,
}

impl Node {
    fn entries(&self) -> &[usize] {
        match &self.kind {
            NodeKind::Leaf(v) | NodeKind::Internal(v) => v,
        }
    }
}

/// What one insertion did to the tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    pub subcluster: usize,
    pub new_subcluster: bool,
    pub splits: usize,
}

/// Height-balanced tree of CF summaries. Leaf subclusters keep stable ids in
/// creation order; splits move them between leaf nodes but never merge them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfTree {
    params: CfTreeParams,
    dim: Option<usize>,
    nodes: Vec<Node>,
    root: usize,
    subclusters: Vec<ClusteringFeature>,
    inserted: u64,
}

impl CfTree {
    pub fn new(params: CfTreeParams) -> Result<Self, StreamError> {
        if !(params.threshold >= 0.0 && params.threshold.is_finite()) {
            return Err(StreamError::InvalidParams(format!("threshold must be non-negative, got {}", params.threshold)));
        }
        if params.branching_factor < 2 {
            return Err(StreamError::InvalidParams("branching factor must be at least 2".into()));
        }
        Ok(CfTree { params, dim: None, nodes: Vec::new(), root: 0, subclusters: Vec::new(), inserted: 0 })
    }

    pub fn params(&self) -> CfTreeParams {
        self.params
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Leaf subclusters indexed by id.
    pub fn leaves(&self) -> &[ClusteringFeature] {
        &self.subclusters
    }

    pub fn n_leaves(&self) -> usize {
        self.subclusters.len()
    }

    pub fn points_inserted(&self) -> u64 {
        self.inserted
    }

    pub fn root_cf(&self) -> Option<&ClusteringFeature> {
        self.nodes.get(self.root).map(|n| &n.cf)
    }

    pub fn height(&self) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let mut h = 1;
        let mut node = self.root;
        while let NodeKind::Internal(children) = &self.nodes[node].kind {
            node = children[0];
            h += 1;
        }
        h
    }

    fn check_point(&self, p: &[f64]) -> Result<(), StreamError> {
        if let Some(d) = self.dim {
            if p.len() != d {
                return Err(StreamError::DimensionMismatch { expected: d, got: p.len() });
            }
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(StreamError::NonFiniteInput);
        }
        Ok(())
    }

    fn entry_centroid(&self, leaf_level: bool, id: usize) -> Vec<f64> {
        if leaf_level {
            self.subclusters[id].centroid()
        } else {
            self.nodes[id].cf.centroid()
        }
    }

    fn closest_entry(&self, leaf_level: bool, entries: &[usize], p: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (pos, &id) in entries.iter().enumerate() {
            let d = sq_dist(&self.entry_centroid(leaf_level, id), p);
            if d < best.1 {
                best = (pos, d);
            }
        }
        best.0
    }

    /// Descends to the closest leaf subcluster, absorbs the point there if
    /// the merged radius stays within the threshold, otherwise opens a new
    /// subcluster; overflowing nodes split on their farthest pair.
    pub fn insert(&mut self, p: &[f64]) -> Result<InsertOutcome, StreamError> {
        self.check_point(p)?;
        let dim = *self.dim.get_or_insert(p.len());
        self.inserted += 1;

        if self.nodes.is_empty() {
            self.subclusters.push(ClusteringFeature::from_point(p));
            self.nodes.push(Node { cf: ClusteringFeature::from_point(p), kind: NodeKind::Leaf(vec![0]) });
            self.root = 0;
            return Ok(InsertOutcome { subcluster: 0, new_subcluster: true, splits: 0 });
        }

        let mut path = vec![self.root];
        loop {
            let node = *path.last().expect("non-empty path");
            match &self.nodes[node].kind {
                NodeKind::Internal(children) => {
                    let pos = self.closest_entry(false, children, p);
                    path.push(children[pos]);
                }
                NodeKind::Leaf(_) => break,
            }
        }

        let leaf = *path.last().expect("leaf");
        let NodeKind::Leaf(subs) = &self.nodes[leaf].kind else { unreachable!("descent ends at a leaf") };
        let pos = self.closest_entry(true, subs, p);
        let candidate = subs[pos];
        let limit = self.params.threshold * self.params.threshold + RADIUS_SQ_TOLERANCE;
        let mut outcome = InsertOutcome::default();
        if self.subclusters[candidate].radius_sq_with(p) <= limit {
            self.subclusters[candidate].add_point(p);
            outcome.subcluster = candidate;
        } else {
            let id = self.subclusters.len();
            self.subclusters.push(ClusteringFeature::from_point(p));
            if let NodeKind::Leaf(subs) = &mut self.nodes[leaf].kind {
                subs.push(id);
            }
            outcome.subcluster = id;
            outcome.new_subcluster = true;
        }

        for level in (0..path.len()).rev() {
            let node = path[level];
            if self.nodes[node].entries().len() > self.params.branching_factor {
                let sibling = self.split(node, dim);
                outcome.splits += 1;
                if level == 0 {
                    let kind = NodeKind::Internal(vec![node, sibling]);
                    self.nodes.push(Node { cf: ClusteringFeature::empty(dim), kind });
                    self.root = self.nodes.len() - 1;
                    self.recompute(self.root, dim);
                } else if let NodeKind::Internal(children) = &mut self.nodes[path[level - 1]].kind {
                    let at = children.iter().position(|&c| c == node).expect("child of parent");
                    children.insert(at + 1, sibling);
                }
            } else {
                self.recompute(node, dim);
            }
        }
        Ok(outcome)
    }

    /// Node CF := ordered sum of its entries' CFs.
    fn recompute(&mut self, node: usize, dim: usize) {
        let mut cf = ClusteringFeature::empty(dim);
        match &self.nodes[node].kind {
            NodeKind::Leaf(subs) => subs.iter().for_each(|&s| cf.merge(&self.subclusters[s])),
            NodeKind::Internal(children) => children.iter().for_each(|&c| cf.merge(&self.nodes[c].cf)),
        }
        self.nodes[node].cf = cf;
    }

    /// Splits `node` in place by farthest-pair seeding; returns the new sibling.
    fn split(&mut self, node: usize, dim: usize) -> usize {
        let leaf_level = matches!(self.nodes[node].kind, NodeKind::Leaf(_));
        let entries = self.nodes[node].entries().to_vec();
        let centroids: Vec<Vec<f64>> = entries.iter().map(|&e| self.entry_centroid(leaf_level, e)).collect();

        let (mut s1, mut s2, mut far) = (0, 1, f64::NEG_INFINITY);
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                let d = sq_dist(&centroids[i], &centroids[j]);
                if d > far {
                    (s1, s2, far) = (i, j, d);
                }
            }
        }
        let (mut keep, mut moved) = (Vec::new(), Vec::new());
        for (i, &e) in entries.iter().enumerate() {
            let to_s2 = i == s2
                || (i != s1 && sq_dist(&centroids[i], &centroids[s2]) < sq_dist(&centroids[i], &centroids[s1]));
            if to_s2 {
                moved.push(e);
            } else {
                keep.push(e);
            }
        }
        let (kind_keep, kind_moved) = if leaf_level {
            (NodeKind::Leaf(keep), NodeKind::Leaf(moved))
        } else {
            (NodeKind::Internal(keep), NodeKind::Internal(moved))
        };
        self.nodes[node].kind = kind_keep;
        self.nodes.push(Node { cf: ClusteringFeature::empty(dim), kind: kind_moved });
        let sibling = self.nodes.len() - 1;
        self.recompute(node, dim);
        self.recompute(sibling, dim);
        sibling
    }

    /// Nearest subcluster by centroid distance over all leaves; lowest id on ties.
    pub fn assign(&self, p: &[f64]) -> Result<usize, StreamError> {
        if self.subclusters.is_empty() {
            return Err(StreamError::EmptyModel);
        }
        self.check_point(p)?;
        let mut best = (0, f64::INFINITY);
        for (id, cf) in self.subclusters.iter().enumerate() {
            let d = sq_dist(&cf.centroid(), p);
            if d < best.1 {
                best = (id, d);
            }
        }
        Ok(best.0)
    }

    /// Global clustering of leaf subclusters by single linkage over their
    /// centroids. Merges until `target_k` groups remain or, without a target,
    /// while the closest pair of groups is within `2 * threshold`.
    ///
    /// Returns `mapping[subcluster id] = global id`, numbered by lowest member.
    pub fn global_clusters(&self, target_k: Option<usize>) -> Vec<usize> {
        let centroids: Vec<Vec<f64>> = self.subclusters.iter().map(ClusteringFeature::centroid).collect();
        single_linkage(&centroids, target_k, 2.0 * self.params.threshold)
    }

    /// Full structural check; see [`TreeAudit`].
    pub fn audit(&self) -> TreeAudit {
        let mut audit = TreeAudit { min_raw_radius_sq: f64::INFINITY, ..TreeAudit::default() };
        if self.nodes.is_empty() {
            audit.point_count_ok = self.inserted == 0;
            audit.leaves_partitioned = self.subclusters.is_empty();
            audit.additive = true;
            audit.within_branching = true;
            audit.within_threshold = true;
            audit.balanced = true;
            return audit;
        }
        let dim = self.dim.unwrap_or(0);
        let limit = self.params.threshold * self.params.threshold + RADIUS_SQ_TOLERANCE;
        audit.additive = true;
        audit.within_branching = true;
        audit.within_threshold = true;
        audit.leaves_partitioned = true;
        let mut seen = BTreeSet::new();
        let mut leaf_depths = BTreeSet::new();
        let mut stack = vec![(self.root, 1usize)];
        while let Some((node, depth)) = stack.pop() {
            let n = &self.nodes[node];
            if n.entries().len() > self.params.branching_factor || n.entries().is_empty() {
                audit.within_branching = false;
            }
            let mut sum = ClusteringFeature::empty(dim);
            match &n.kind {
                NodeKind::Leaf(subs) => {
                    leaf_depths.insert(depth);
                    for &s in subs {
                        let cf = &self.subclusters[s];
                        sum.merge(cf);
                        if !seen.insert(s) {
                            audit.leaves_partitioned = false;
                        }
                        let r2 = cf.raw_radius_sq();
                        audit.min_raw_radius_sq = audit.min_raw_radius_sq.min(r2);
                        if cf.n > 1 && r2 > limit {
                            audit.within_threshold = false;
                        }
                    }
                }
                NodeKind::Internal(children) => {
                    for &c in children {
                        sum.merge(&self.nodes[c].cf);
                        stack.push((c, depth + 1));
                    }
                }
            }
            if sum != n.cf {
                audit.additive = false;
            }
        }
        if seen.len() != self.subclusters.len() {
            audit.leaves_partitioned = false;
        }
        audit.balanced = leaf_depths.len() == 1;
        audit.point_count_ok = self.nodes[self.root].cf.n == self.inserted
            && self.subclusters.iter().map(|c| c.n).sum::<u64>() == self.inserted;
        audit
    }
}

/// Result of [`CfTree::audit`]. `ok()` requires every check to hold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TreeAudit {
    /// Every node CF equals the ordered sum of its entries, bit for bit.
    pub additive: bool,
    /// Root and leaves account for every inserted point.
    pub point_count_ok: bool,
    /// Each subcluster sits in exactly one leaf node.
    pub leaves_partitioned: bool,
    pub within_branching: bool,
    /// Non-singleton subclusters have radius within the threshold.
    pub within_threshold: bool,
    /// All leaves at one depth.
    pub balanced: bool,
    /// Smallest unclamped `radius²` seen.
    pub min_raw_radius_sq: f64,
}

impl TreeAudit {
    pub fn ok(&self) -> bool {
        self.additive
            && self.point_count_ok
            && self.leaves_partitioned
            && self.within_branching
            && self.within_threshold
            && self.balanced
            && self.min_raw_radius_sq >= -RADIUS_SQ_TOLERANCE
    }
}

/// Single linkage over `points` via Prim's minimum spanning tree.
pub(crate) fn single_linkage(points: &[Vec<f64>], target_k: Option<usize>, max_merge_dist: f64) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    // Prim: O(n²) time, O(n) memory
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    best[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || best[v] < best[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            let (a, b) = (parent[u].min(u), parent[u].max(u));
            edges.push((best[u].sqrt(), a, b));
        }
        for v in 0..n {
            if !in_tree[v] {
                let d = sq_dist(&points[u], &points[v]);
                if d < best[v] {
                    best[v] = d;
                    parent[v] = u;
                }
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut groups = n;
    for (d, a, b) in edges {
        let stop = match target_k {
            Some(k) => groups <= k.max(1),
            None => d > max_merge_dist,
        };
        if stop {
            break;
        }
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra.max(rb)] = ra.min(rb);
            groups -= 1;
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut mapping = Vec::with_capacity(n);
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut uf, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        mapping.push(ids[r]);
    }
    mapping
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(threshold: f64, branching_factor: usize) -> CfTree {
        CfTree::new(CfTreeParams { threshold, branching_factor }).unwrap()
    }

    #[test]
    fn two_points_merge_under_large_threshold() {
        let mut t = tree(10.0, 50);
        t.insert(&[1.0, 1.0]).unwrap();
        t.insert(&[3.0, 3.0]).unwrap();
        assert_eq!(t.n_leaves(), 1);
        let cf = &t.leaves()[0];
        assert_eq!(cf.n, 2);
        assert_eq!(cf.ls, vec![4.0, 4.0]);
        assert_eq!(cf.ss, 20.0);
    }

    #[test]
    fn duplicate_point_merges_at_zero_threshold() {
        let mut t = tree(0.0, 50);
        let a = t.insert(&[0.3, -1.7, 2.2]).unwrap();
        let b = t.insert(&[0.3, -1.7, 2.2]).unwrap();
        assert!(a.new_subcluster);
        assert!(!b.new_subcluster);
        assert_eq!(t.leaves()[0].n, 2);
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn far_point_opens_new_subcluster() {
        let mut t = tree(0.5, 50);
        t.insert(&[0.0]).unwrap();
        let o = t.insert(&[5.0]).unwrap();
        assert!(o.new_subcluster);
        assert_eq!(t.n_leaves(), 2);
    }

    #[test]
    fn splits_keep_tree_valid() {
        let mut t = tree(0.1, 3);
        for i in 0..200 {
            let x = (i * 37 % 101) as f64;
            let y = (i * 53 % 97) as f64;
            t.insert(&[x, y]).unwrap();
            assert!(t.audit().ok(), "audit failed after insert {i}: {:?}", t.audit());
        }
        assert!(t.height() > 2);
        assert_eq!(t.root_cf().unwrap().n, 200);
    }

    #[test]
    fn assign_errors_and_single_leaf() {
        let mut t = tree(100.0, 10);
        assert!(matches!(t.assign(&[0.0]), Err(StreamError::EmptyModel)));
        t.insert(&[1.0]).unwrap();
        assert_eq!(t.assign(&[-50.0]).unwrap(), 0);
        assert!(matches!(t.insert(&[1.0, 2.0]), Err(StreamError::DimensionMismatch { .. })));
        assert!(matches!(t.insert(&[f64::NAN]), Err(StreamError::NonFiniteInput)));
    }

    #[test]
    fn global_clusters_identity_and_groups() {
        let mut t = tree(0.1, 4);
        for x in [0.0, 0.5, 1.0, 20.0, 20.5, 21.0] {
            t.insert(&[x]).unwrap();
        }
        assert_eq!(t.n_leaves(), 6);
        assert_eq!(t.global_clusters(Some(6)), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(t.global_clusters(Some(2)), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(t.global_clusters(Some(1)), vec![0; 6]);
        // no target: merge within 2·threshold = 0.2 only
        assert_eq!(t.global_clusters(None), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn invalid_params() {
        assert!(CfTree::new(CfTreeParams { threshold: -1.0, branching_factor: 5 }).is_err());
        assert!(CfTree::new(CfTreeParams { threshold: 1.0, branching_factor: 1 }).is_err());
    }

    #[test]
    fn radius_of_known_set() {
        let mut cf = ClusteringFeature::from_point(&[0.0, 0.0]);
        cf.add_point(&[2.0, 0.0]);
        assert_eq!(cf.centroid(), vec![1.0, 0.0]);
        assert_eq!(cf.radius(), 1.0);
        let mut other = ClusteringFeature::from_point(&[4.0, 4.0]);
        other.merge(&cf);
        assert_eq!(other.n, 3);
        assert_eq!(other.ls, vec![6.0, 4.0]);
        assert_eq!(other.ss, 36.0);
    }
}
