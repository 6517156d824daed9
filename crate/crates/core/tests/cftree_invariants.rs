//! Structural invariants of the CF tree under arbitrary insertion sequences.

use flowprofiler::stream::{CfTree, CfTreeParams, CfTreeSnapshot, IncrementalModel, MiniBatchKMeans};
use proptest::prelude::*;

fn params(threshold: f64, branching_factor: usize) -> CfTreeParams {
    CfTreeParams { threshold, branching_factor }
}

/// Coordinates on a 1/8 grid: every CF sum is exact in binary floating point.
fn dyadic_points(max_len: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((-64i32..64).prop_map(|v| f64::from(v) / 8.0), dim), 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn audit_holds_after_every_insert(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..250),
        threshold in 0.05f64..2.0,
        bf in 2usize..8,
    ) {
        let mut tree = CfTree::new(params(threshold, bf)).unwrap();
        for (i, p) in points.iter().enumerate() {
            let before = tree.n_leaves();
            let out = tree.insert(p).unwrap();
            let audit = tree.audit();
            prop_assert!(audit.ok(), "after insert {i}: {audit:?}");
            prop_assert_eq!(tree.n_leaves(), before + usize::from(out.new_subcluster));
            prop_assert!(out.subcluster < tree.n_leaves());
        }
        prop_assert_eq!(tree.points_inserted(), points.len() as u64);
    }

    #[test]
    fn root_cf_is_order_independent(points in dyadic_points(120, 2), seed in any::<u64>(), bf in 2usize..6) {
        let mut shuffled = points.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let mut a = CfTree::new(params(0.75, bf)).unwrap();
        let mut b = CfTree::new(params(0.75, bf)).unwrap();
        for p in &points { a.insert(p).unwrap(); }
        for p in &shuffled { b.insert(p).unwrap(); }
        prop_assert_eq!(a.root_cf(), b.root_cf());
        let n = points.len() as f64;
        let root = a.root_cf().unwrap();
        for d in 0..2 {
            let mean: f64 = points.iter().map(|p| p[d]).sum::<f64>() / n;
            prop_assert!((root.centroid()[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn subcluster_ids_are_stable(points in dyadic_points(150, 3)) {
        // Each point keeps the id it was absorbed into: the recorded totals
        // per id must equal the final leaf counts.
        let mut tree = CfTree::new(params(0.5, 3)).unwrap();
        let mut tally: Vec<u64> = Vec::new();
        for p in &points {
            let out = tree.insert(p).unwrap();
            if out.subcluster >= tally.len() {
                tally.resize(out.subcluster + 1, 0);
            }
            tally[out.subcluster] += 1;
        }
        let leaf_counts: Vec<u64> = tree.leaves().iter().map(|cf| cf.n).collect();
        prop_assert_eq!(tally, leaf_counts);
    }

    #[test]
    fn global_clusters_cover_every_subcluster(points in dyadic_points(100, 2)) {
        let mut tree = CfTree::new(params(0.3, 4)).unwrap();
        for p in &points { tree.insert(p).unwrap(); }
        let mapping = tree.global_clusters(None);
        prop_assert_eq!(mapping.len(), tree.n_leaves());
        let k = mapping.iter().max().map_or(0, |m| m + 1);
        prop_assert!(k <= tree.n_leaves());
        for g in 0..k {
            prop_assert!(mapping.contains(&g), "global ids must be dense");
        }
        let two = tree.global_clusters(Some(1));
        prop_assert!(two.iter().all(|&g| g == 0));
    }
}

#[test]
fn snapshot_round_trips() {
    let mut tree = CfTree::new(params(0.4, 3)).unwrap();
    for i in 0..200 {
        let x = f64::from(i % 17) * 0.31;
        tree.insert(&[x, (x * 1.7).sin()]).unwrap();
    }
    let snap = CfTreeSnapshot::new(&tree, "scaler-abc");
    let back = CfTreeSnapshot::from_json(&snap.to_json()).unwrap();
    assert_eq!(back, snap);
}

#[test]
fn minibatch_and_tree_share_the_model_interface() {
    let batch: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i % 2) * 10.0, f64::from(i) * 0.01]).collect();
    let mut models: Vec<Box<dyn IncrementalModel>> =
        vec![Box::new(CfTree::new(params(1.0, 10)).unwrap()), Box::new(MiniBatchKMeans::new(2, 7).unwrap())];
    for m in &mut models {
        let stats = m.partial_fit(&batch).unwrap();
        assert_eq!(stats.points_absorbed, 40);
        assert_ne!(m.predict(&[0.0, 0.2]).unwrap(), m.predict(&[10.0, 0.2]).unwrap());
    }
}
