use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LLOYD_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index (0 or 1) of every row.
    pub labels: Vec<usize>,
    pub centers: [DVector<f64>; 2],
    pub inertia: f64,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[j]).powi(2)).sum()
}

fn assign(x: &DMatrix<f64>, centers: &[DVector<f64>; 2], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let d0 = sq_dist(x, i, &centers[0]);
        let d1 = sq_dist(x, i, &centers[1]);
        // ties go to the first cluster
        if d1 < d0 {
            *label = 1;
            inertia += d1;
        } else {
            *label = 0;
            inertia += d0;
        }
    }
    inertia
}

fn centroids(x: &DMatrix<f64>, labels: &[usize]) -> Option<[DVector<f64>; 2]> {
    let d = x.ncols();
    let mut sums = [DVector::zeros(d), DVector::zeros(d)];
    let mut counts = [0usize; 2];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..d {
            sums[l][j] += x[(i, j)];
        }
    }
    if counts.contains(&0) {
        return None;
    }
    let [s0, s1] = sums;
    Some([s0 / counts[0] as f64, s1 / counts[1] as f64])
}

fn one_run(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Option<KMeans> {
    let n = x.nrows();
    let first = rng.gen_range(0..n);
    let c0 = x.row(first).transpose();
    // k-means++: second center drawn with probability proportional to D²
    let d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &c0)).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut u = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        pick
    } else {
        rng.gen_range(0..n)
    };
    let mut centers = [c0, x.row(second).transpose()];
    let mut labels = vec![0usize; n];
    let mut inertia = assign(x, &centers, &mut labels);
    for _ in 0..LLOYD_MAX_ITER {
        centers = centroids(x, &labels)?;
        let before = labels.clone();
        inertia = assign(x, &centers, &mut labels);
        if labels == before {
            break;
        }
    }
    centroids(x, &labels)?;
    Some(KMeans {
        labels,
        centers,
        inertia,
    })
}

/// Seeded 2-means with k-means++ starts, keeping the restart with the
/// lowest within-cluster sum of squares.
pub fn kmeans2(x: &DMatrix<f64>, restarts: usize, seed: u64) -> Result<KMeans> {
    if x.nrows() < 2 {
        return Err(Error::Initialization("need at least two rows to cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        if let Some(run) = one_run(x, &mut rng) {
            if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
                best = Some(run);
            }
        }
    }
    best.ok_or_else(|| Error::Initialization("one cluster stayed empty in every k-means restart".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_fail() {
        let x = DMatrix::from_element(20, 2, 3.0);
        assert!(matches!(kmeans2(&x, 10, 1), Err(Error::Initialization(_))));
    }

    #[test]
    fn two_points_split() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 10.0, 10.1]);
        let km = kmeans2(&x, 5, 3).unwrap();
        assert_eq!(km.labels[0], km.labels[1]);
        assert_eq!(km.labels[2], km.labels[3]);
        assert_ne!(km.labels[0], km.labels[2]);
        assert!((km.inertia - 0.01).abs() < 1e-12);
    }
}
