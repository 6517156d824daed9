use nalgebra::{DMatrix, SymmetricEigen};

/// Two-component PCA fitted once and then applied unchanged to any point.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    components: [Vec<f64>; 2],
}

impl Pca {
    /// Top-2 eigenvectors of the sample covariance of `points`. Each
    /// component's sign is fixed so its largest-magnitude entry is positive.
    pub fn fit<P: AsRef<[f64]>>(points: &[P]) -> Option<Self> {
        let n = points.len();
        let d = points.first()?.as_ref().len();
        if d == 0 {
            return None;
        }
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, x) in mean.iter_mut().zip(p.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in points {
            let c: Vec<f64> = p.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let component = |rank: usize| -> Vec<f64> {
            let Some(&col) = order.get(rank) else { return vec![0.0; d] };
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Some(Pca { mean, components: [component(0), component(1)] })
    }

    pub fn project(&self, p: &[f64]) -> (f64, f64) {
        let dot = |c: &[f64]| p.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum::<f64>();
        (dot(&self.components[0]), dot(&self.components[1]))
    }
}
