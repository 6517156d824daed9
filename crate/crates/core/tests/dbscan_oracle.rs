//! DBSCAN checked against a union-find reference on small random inputs.

use flowprofiler::cluster::{dbscan, DbscanParams, NOISE};
use proptest::prelude::*;

mod oracle;
use oracle::dbscan_reference as reference;

fn grid_points(max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Integer coordinates make many pairwise distances land exactly on eps.
    prop::collection::vec(prop::collection::vec((0i32..12).prop_map(f64::from), 2), 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_reference_on_lattice(points in grid_points(60), eps in 1u32..4, min_pts in 1usize..7) {
        let eps = f64::from(eps);
        let got = dbscan(&points, DbscanParams::new(eps, min_pts).unwrap()).unwrap();
        prop_assert_eq!(got.labels, reference(&points, eps, min_pts));
    }

    #[test]
    fn matches_reference_on_continuous(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..80),
        eps in 0.3f64..3.0,
        min_pts in 2usize..8,
    ) {
        let got = dbscan(&points, DbscanParams::new(eps, min_pts).unwrap()).unwrap();
        prop_assert_eq!(got.labels, reference(&points, eps, min_pts));
    }

    #[test]
    fn relabeling_input_order_preserves_partition(points in grid_points(40), min_pts in 2usize..5) {
        let params = DbscanParams::new(1.5, min_pts).unwrap();
        let fwd = dbscan(&points, params).unwrap().labels;
        let rev_points: Vec<Vec<f64>> = points.iter().rev().cloned().collect();
        let mut rev = dbscan(&rev_points, params).unwrap().labels;
        rev.reverse();
        // Core points and noise do not depend on order; only border ties may move.
        let ref_fwd = reference(&points, 1.5, min_pts);
        for i in 0..points.len() {
            prop_assert_eq!(fwd[i] == NOISE, rev[i] == NOISE);
            prop_assert_eq!(fwd[i] == NOISE, ref_fwd[i] == NOISE);
        }
    }
}

#[test]
fn noise_fraction_and_cluster_count_follow_labels() {
    let points: Vec<Vec<f64>> = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0], vec![5.1], vec![5.2], vec![9.0]];
    let a = dbscan(&points, DbscanParams::new(0.15, 2).unwrap()).unwrap();
    assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 1, NOISE]);
    assert_eq!(a.n_clusters, 2);
    assert!((a.noise_fraction - 1.0 / 7.0).abs() < 1e-15);
}
