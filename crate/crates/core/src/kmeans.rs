//! Lloyd's k-means with k-means++ seeding, used as the comparison baseline,
//! and the Calinski-Harabasz index.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 2;
pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

/// Returned by [`calinski_harabasz`] when within-cluster dispersion is zero.
pub const CH_CAP: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult<T> {
    pub labels: Vec<usize>,
    pub centroids: DenseMatrix<T>,
    pub inertia: T,
    pub iterations: usize,
    /// Seed of the winning restart.
    pub seed: u64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> KmeansResult<T> {
    pub fn cluster_ids(&self) -> Vec<i64> {
        self.labels.iter().map(|&l| l as i64).collect()
    }
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
}

fn nearest<T: Scalar>(row: &[T], centroids: &DenseMatrix<T>) -> (usize, T) {
    let mut best = (0, squared_distance(row, centroids.row(0)));
    for c in 1..centroids.rows() {
        let d = squared_distance(row, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(points: &FeatureMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<T> {
    let m = points.rows();
    let mut centroids = DenseMatrix::zeros(k, points.cols());
    let first = rng.gen_range(0..m);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..m)
        .map(|i| squared_distance(points.row(i), centroids.row(0)).to_f64_lossy())
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.gen_range(0..m),
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), centroids.row(c)).to_f64_lossy());
        }
    }
    centroids
}

fn assign<T: Scalar>(points: &FeatureMatrix<T>, centroids: &DenseMatrix<T>, labels: &mut [usize]) -> T {
    let mut inertia = T::zero();
    for (i, label) in labels.iter_mut().enumerate() {
        let (c, d) = nearest(points.row(i), centroids);
        *label = c;
        inertia = inertia + d;
    }
    inertia
}

fn update<T: Scalar>(points: &FeatureMatrix<T>, labels: &[usize], centroids: &mut DenseMatrix<T>) {
    let (k, n) = (centroids.rows(), centroids.cols());
    let mut sums = DenseMatrix::<T>::zeros(k, n);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s = *s + x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            // re-seed on the point farthest from the abandoned centroid
            let far = (0..points.rows())
                .max_by(|&a, &b| {
                    let da = squared_distance(points.row(a), centroids.row(c));
                    let db = squared_distance(points.row(b), centroids.row(c));
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
                })
                .expect("non-empty input");
            centroids.row_mut(c).copy_from_slice(points.row(far));
        } else {
            let cnt = T::from_usize_lossy(counts[c]);
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / cnt;
            }
        }
    }
}

fn single_run<T: Scalar>(points: &FeatureMatrix<T>, k: usize, seed: u64) -> KmeansResult<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0; points.rows()];
    let mut history: Vec<T> = Vec::new();
    let tol = T::from_f64_lossy(RELATIVE_TOLERANCE);
    loop {
        let inertia = assign(points, &centroids, &mut labels);
        let converged = match history.last() {
            Some(&prev) => prev - inertia <= tol * prev,
            None => false,
        };
        history.push(inertia);
        if converged || history.len() >= MAX_ITERATIONS {
            break;
        }
        update(points, &labels, &mut centroids);
    }
    KmeansResult {
        labels,
        centroids,
        inertia: *history.last().expect("at least one iteration"),
        iterations: history.len(),
        seed,
        inertia_history: history,
    }
}

/// Best of `restarts` runs seeded `seed, seed+1, ...`; ties go to the
/// earliest seed.
pub fn fit_kmeans<T: Scalar>(points: &FeatureMatrix<T>, k: usize, seed: u64, restarts: usize) -> Result<KmeansResult<T>> {
    if k == 0 || restarts == 0 {
        return Err(Error::InvalidParams("k and restarts must be positive".into()));
    }
    if k > points.rows() {
        return Err(Error::KTooLarge { k, rows: points.rows() });
    }
    if !points.is_finite() {
        return Err(Error::MissingValues);
    }
    let runs: Vec<KmeansResult<T>> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| single_run(points, k, seed.wrapping_add(r)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("restarts > 0");
    Ok(best)
}

/// Sum of squared distances from each row to its assigned centroid.
pub fn inertia<T: Scalar>(points: &FeatureMatrix<T>, labels: &[usize], centroids: &DenseMatrix<T>) -> T {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| squared_distance(points.row(i), centroids.row(l)))
        .fold(T::zero(), |a, b| a + b)
}

/// Between-cluster over within-cluster dispersion, each normalised by its
/// degrees of freedom. Labels must be dense ids in `0..k`.
pub fn calinski_harabasz<T: Scalar>(points: &FeatureMatrix<T>, labels: &[usize]) -> Result<f64> {
    let m = points.rows();
    if labels.len() != m {
        return Err(Error::LengthMismatch {
            left: m,
            right: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let n = points.cols();
    let mut sums = vec![vec![0.0f64; n]; k];
    let mut counts = vec![0usize; k];
    let mut total = vec![0.0f64; n];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (j, &x) in points.row(i).iter().enumerate() {
            let x = x.to_f64_lossy();
            sums[l][j] += x;
            total[j] += x;
        }
    }
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    if nonempty < 2 {
        return Err(Error::DegenerateLabels("need at least two non-empty clusters".into()));
    }
    if m <= nonempty {
        return Err(Error::DegenerateLabels("need more rows than clusters".into()));
    }
    let grand: Vec<f64> = total.iter().map(|s| s / m as f64).collect();
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();

    let between: f64 = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &cnt)| cnt as f64 * c.iter().zip(&grand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            points
                .row(i)
                .iter()
                .zip(&centroids[l])
                .map(|(&x, c)| (x.to_f64_lossy() - c) * (x.to_f64_lossy() - c))
                .sum::<f64>()
        })
        .sum();
    if within == 0.0 {
        return Ok(CH_CAP);
    }
    let kk = nonempty as f64;
    Ok((between / (kk - 1.0)) / (within / (m as f64 - kk)))
}
