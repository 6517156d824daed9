//! Direct reference implementations shared by the oracle tests and the
//! acceptance runner. Written for clarity, not speed.
#![allow(dead_code)]

use std::collections::BTreeMap;

use flowprofiler::cluster::NOISE;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Core points join when within `eps`; clusters are numbered by their
/// lowest-index core point; a border point takes the lowest numbered cluster
/// among the core points that reach it.
pub fn dbscan_reference(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut id_of_root = BTreeMap::new();
    let mut labels = vec![NOISE; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = id_of_root.len() as i64;
            labels[i] = *id_of_root.entry(root).or_insert(next);
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n).filter(|&j| core[j] && near(i, j)).map(|j| labels[j]).min().unwrap_or(NOISE);
        }
    }
    labels
}

pub fn nmi_reference<L: Ord + Copy>(a: &[L], b: &[L]) -> f64 {
    let n = a.len() as f64;
    let mut pa: BTreeMap<L, f64> = BTreeMap::new();
    let mut pb: BTreeMap<L, f64> = BTreeMap::new();
    let mut pab: BTreeMap<(L, L), f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
        *pab.entry((x, y)).or_default() += 1.0 / n;
    }
    let h = |m: &BTreeMap<L, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mi: f64 = pab.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum();
    mi / ((ha + hb) / 2.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn silhouette_reference(points: &[Vec<f64>], labels: &[i64]) -> f64 {
    let idx: Vec<usize> = (0..points.len()).filter(|&i| labels[i] >= 0).collect();
    let mut total = 0.0;
    for &i in &idx {
        let same: Vec<usize> = idx.iter().copied().filter(|&j| j != i && labels[j] == labels[i]).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| euclid(&points[i], &points[j])).sum::<f64>() / same.len() as f64;
        let mut others: Vec<i64> = idx.iter().map(|&j| labels[j]).filter(|&l| l != labels[i]).collect();
        others.sort_unstable();
        others.dedup();
        let b = others
            .iter()
            .map(|&l| {
                let members: Vec<usize> = idx.iter().copied().filter(|&j| labels[j] == l).collect();
                members.iter().map(|&j| euclid(&points[i], &points[j])).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / idx.len() as f64
}


/// Purity and Share of one novel device from per-subcluster
/// `(novel, known)` counts: subclusters whose novel fraction reaches
/// `threshold` are valid; Purity weights each valid local purity by its novel
/// count, Share is the captured novel count over `n_total`.
pub fn purity_share_reference(table: &BTreeMap<usize, (u64, u64)>, threshold: f64, n_total: u64) -> (f64, f64) {
    let valid: Vec<(f64, f64)> = table
        .values()
        .filter(|&&(nov, _)| nov > 0)
        .map(|&(nov, known)| (nov as f64, nov as f64 / (nov + known) as f64))
        .filter(|&(_, local)| local >= threshold)
        .collect();
    if valid.is_empty() {
        return (0.0, 0.0);
    }
    let captured: f64 = valid.iter().map(|v| v.0).sum();
    (valid.iter().map(|&(nov, local)| nov * local).sum::<f64>() / captured, captured / n_total as f64)
}
