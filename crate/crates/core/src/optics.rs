//! OPTICS ordering, k-distance Eps selection and threshold extraction.
//!
//! Neighbourhoods are closed Euclidean balls that include the query point,
//! and a point is core when its neighbourhood holds at least `min_pts`
//! points. Neighbour search is exact brute force.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::{euclidean, total_cmp, Scalar};

pub const DEFAULT_MIN_PTS: usize = 15;

/// Noise marker in cluster labels.
pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StartOrder {
    /// Restart from the lowest-index unprocessed point.
    #[default]
    LowestIndex,
    /// Restart order is a seeded shuffle of the row indices.
    Seeded { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams<T> {
    pub eps: T,
    pub min_pts: usize,
    #[serde(default)]
    pub start: StartOrder,
}

impl<T: Scalar> OpticsParams<T> {
    pub fn new(eps: T, min_pts: usize) -> Result<Self> {
        let p = Self {
            eps,
            min_pts,
            start: StartOrder::LowestIndex,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > T::zero()) || !self.eps.is_finite() {
            return Err(Error::InvalidParams(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts < 2 {
            return Err(Error::InvalidParams(format!(
                "min_pts must be at least 2, got {}",
                self.min_pts
            )));
        }
        Ok(())
    }
}

/// Rows within `eps` of row `i` (itself included), ascending by index,
/// paired with their distance.
fn neighborhood<T: Scalar>(points: &FeatureMatrix<T>, i: usize, eps: T) -> Vec<(usize, T)> {
    let p = points.row(i);
    (0..points.rows())
        .filter_map(|j| {
            let d = euclidean(p, points.row(j));
            (d <= eps).then_some((j, d))
        })
        .collect()
}

pub fn neighbors<T: Scalar>(points: &FeatureMatrix<T>, i: usize, eps: T) -> Vec<usize> {
    neighborhood(points, i, eps).into_iter().map(|(j, _)| j).collect()
}

fn core_from_neighborhood<T: Scalar>(nbhd: &[(usize, T)], min_pts: usize) -> Option<T> {
    if min_pts == 0 || nbhd.len() < min_pts {
        return None;
    }
    let mut d: Vec<T> = nbhd.iter().map(|&(_, d)| d).collect();
    let (_, kth, _) = d.select_nth_unstable_by(min_pts - 1, total_cmp);
    Some(*kth)
}

/// Distance to the `min_pts`-th nearest neighbour (the point itself is the
/// first), or `None` when fewer than `min_pts` points lie within `eps`.
pub fn core_distance<T: Scalar>(points: &FeatureMatrix<T>, i: usize, eps: T, min_pts: usize) -> Option<T> {
    core_from_neighborhood(&neighborhood(points, i, eps), min_pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsResult<T> {
    /// Row indices in processing order.
    pub ordering: Vec<usize>,
    /// Reachability per ordered position; `None` is undefined.
    pub reachability: Vec<Option<T>>,
    /// Core distance per row.
    pub core_distance: Vec<Option<T>>,
    /// Predecessor per row, the point whose expansion set its reachability.
    pub predecessor: Vec<Option<usize>>,
    pub params: OpticsParams<T>,
}

impl<T: Scalar> OpticsResult<T> {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// Reachability indexed by row instead of position.
    pub fn reachability_by_row(&self) -> Vec<Option<T>> {
        let mut out = vec![None; self.len()];
        for (pos, &row) in self.ordering.iter().enumerate() {
            out[row] = self.reachability[pos];
        }
        out
    }

    pub fn max_finite_reachability(&self) -> Option<T> {
        self.reachability.iter().flatten().copied().reduce(T::max)
    }
}

#[derive(Debug, Clone, Copy)]
struct Key<T>(T);

impl<T: Scalar> PartialEq for Key<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Key<T> {}
impl<T: Scalar> PartialOrd for Key<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Key<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        total_cmp(&self.0, &other.0)
    }
}

pub fn run_optics<T: Scalar>(points: &FeatureMatrix<T>, params: &OpticsParams<T>) -> Result<OpticsResult<T>> {
    params.validate()?;
    let m = points.rows();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if !points.is_finite() {
        return Err(Error::MissingValues);
    }

    let mut starts: Vec<usize> = (0..m).collect();
    if let StartOrder::Seeded { seed } = params.start {
        starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let mut processed = vec![false; m];
    let mut reach: Vec<Option<T>> = vec![None; m];
    let mut core = vec![None; m];
    let mut predecessor = vec![None; m];
    let mut ordering = Vec::with_capacity(m);
    let mut reach_in_order = Vec::with_capacity(m);
    // (reachability, row): the minimum pops first, ties to the lowest row
    let mut seeds: BTreeSet<(Key<T>, usize)> = BTreeSet::new();

    for &start in &starts {
        if processed[start] {
            continue;
        }
        let mut next = Some(start);
        while let Some(p) = next {
            let nbhd = neighborhood(points, p, params.eps);
            processed[p] = true;
            core[p] = core_from_neighborhood(&nbhd, params.min_pts);
            ordering.push(p);
            reach_in_order.push(reach[p]);

            if let Some(core_p) = core[p] {
                for &(o, d) in &nbhd {
                    if processed[o] {
                        continue;
                    }
                    let candidate = core_p.max(d);
                    match reach[o] {
                        None => {
                            reach[o] = Some(candidate);
                            predecessor[o] = Some(p);
                            seeds.insert((Key(candidate), o));
                        }
                        Some(old) if candidate < old => {
                            seeds.remove(&(Key(old), o));
                            reach[o] = Some(candidate);
                            predecessor[o] = Some(p);
                            seeds.insert((Key(candidate), o));
                        }
                        Some(_) => {}
                    }
                }
            }
            next = seeds.pop_first().map(|(_, o)| o);
        }
    }

    Ok(OpticsResult {
        ordering,
        reachability: reach_in_order,
        core_distance: core,
        predecessor,
        params: *params,
    })
}

/// Sorted distances from each point to its `k`-th nearest other point.
pub fn k_distance_curve<T: Scalar>(points: &FeatureMatrix<T>, k: usize) -> Result<Vec<T>> {
    let m = points.rows();
    if k == 0 {
        return Err(Error::InvalidParams("k must be positive".into()));
    }
    if k >= m {
        return Err(Error::KTooLarge { k, rows: m });
    }
    let mut curve: Vec<T> = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut d: Vec<T> = (0..m)
                .filter(|&j| j != i)
                .map(|j| euclidean(p, points.row(j)))
                .collect();
            *d.select_nth_unstable_by(k - 1, total_cmp).1
        })
        .collect();
    curve.sort_by(total_cmp);
    Ok(curve)
}

/// Index just before the largest forward jump (ties to the smallest index).
fn largest_jump<T: Scalar>(sorted: &[T]) -> usize {
    let mut best = 0;
    let mut best_gap = None;
    for i in 0..sorted.len().saturating_sub(1) {
        let gap = sorted[i + 1] - sorted[i];
        if best_gap.map_or(true, |g| gap > g) {
            best_gap = Some(gap);
            best = i;
        }
    }
    best
}

/// Value of the k-distance curve just before its largest jump.
pub fn suggest_eps<T: Scalar>(curve: &[T]) -> Result<T> {
    if curve.len() < 3 {
        return Err(Error::CurveTooShort(curve.len()));
    }
    Ok(curve[largest_jump(curve)])
}

/// Finite reachability value just before the largest gap in the sorted
/// reachability values. `None` when fewer than two values are defined or
/// the suggestion would not be positive.
pub fn suggest_threshold<T: Scalar>(result: &OpticsResult<T>) -> Option<T> {
    let mut r: Vec<T> = result.reachability.iter().flatten().copied().collect();
    if r.len() < 2 {
        return None;
    }
    r.sort_by(total_cmp);
    let t = r[largest_jump(&r)];
    (t > T::zero()).then_some(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// Per row; [`NOISE`] for noise, otherwise contiguous from 0.
    pub cluster_id: Vec<i64>,
    pub threshold: f64,
    pub num_clusters: usize,
}

impl ClusterLabels {
    pub fn len(&self) -> usize {
        self.cluster_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_id.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.cluster_id.iter().filter(|&&c| c == NOISE).count()
    }

    /// Row count per cluster id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in &self.cluster_id {
            if c >= 0 {
                sizes[c as usize] += 1;
            }
        }
        sizes
    }
}

/// Flat clustering from a horizontal cut of the reachability plot.
pub fn extract_clusters<T: Scalar>(result: &OpticsResult<T>, threshold: T) -> Result<ClusterLabels> {
    if !(threshold > T::zero()) || !threshold.is_finite() {
        return Err(Error::NonPositiveThreshold(threshold.to_f64_lossy()));
    }
    let mut cluster_id = vec![NOISE; result.len()];
    let mut current: Option<i64> = None;
    let mut next_id = 0i64;
    for (pos, &row) in result.ordering.iter().enumerate() {
        match (result.reachability[pos], current) {
            (Some(r), Some(c)) if r <= threshold => cluster_id[row] = c,
            _ => {
                if matches!(result.core_distance[row], Some(cd) if cd <= threshold) {
                    current = Some(next_id);
                    cluster_id[row] = next_id;
                    next_id += 1;
                } else {
                    cluster_id[row] = NOISE;
                }
            }
        }
    }
    Ok(ClusterLabels {
        cluster_id,
        threshold: threshold.to_f64_lossy(),
        num_clusters: next_id as usize,
    })
}

/// Brute-force DBSCAN with the same neighbourhood convention, kept as an
/// independent reference for threshold extraction.
pub fn dbscan_oracle<T: Scalar>(points: &FeatureMatrix<T>, eps: T, min_pts: usize) -> Result<ClusterLabels> {
    let m = points.rows();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if !points.is_finite() {
        return Err(Error::MissingValues);
    }
    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; m];
    let mut next_id = 0i64;
    for p in 0..m {
        if labels[p] != UNVISITED {
            continue;
        }
        let n = neighbors(points, p, eps);
        if n.len() < min_pts {
            labels[p] = NOISE;
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[p] = id;
        let mut queue: Vec<usize> = n;
        while let Some(q) = queue.pop() {
            if labels[q] == NOISE {
                labels[q] = id;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = id;
            let nq = neighbors(points, q, eps);
            if nq.len() >= min_pts {
                queue.extend(nq);
            }
        }
    }
    Ok(ClusterLabels {
        cluster_id: labels,
        threshold: eps.to_f64_lossy(),
        num_clusters: next_id as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> FeatureMatrix<f64> {
        FeatureMatrix::from_points_1d(&[0.0, 1.0, 3.0, 10.0])
    }

    #[test]
    fn neighbors_hand_check() {
        let p = line();
        assert_eq!(neighbors(&p, 0, 5.0), vec![0, 1, 2]);
        assert_eq!(neighbors(&p, 0, 0.5), vec![0]);
        let dup = FeatureMatrix::from_points_1d(&[2.0, 2.0, 7.0]);
        assert_eq!(neighbors(&dup, 1, 1e-9), vec![0, 1]);
    }

    #[test]
    fn core_distance_hand_check() {
        let p = line();
        assert_eq!(core_distance(&p, 0, 5.0, 2), Some(1.0));
        assert_eq!(core_distance(&p, 3, 5.0, 2), None);
        for i in 0..4 {
            assert_eq!(core_distance(&p, i, 5.0, 1), Some(0.0));
        }
    }

    #[test]
    fn hand_trace() {
        let r = run_optics(&line(), &OpticsParams::new(5.0, 2).unwrap()).unwrap();
        assert_eq!(r.ordering, vec![0, 1, 2, 3]);
        assert_eq!(r.reachability, vec![None, Some(1.0), Some(2.0), None]);
        assert_eq!(r.predecessor, vec![None, Some(0), Some(1), None]);
        let labels = extract_clusters(&r, 2.5).unwrap();
        assert_eq!(labels.cluster_id, vec![0, 0, 0, NOISE]);
        assert_eq!(labels.num_clusters, 1);
    }

    #[test]
    fn single_point_and_empty() {
        let one = FeatureMatrix::from_points_1d(&[4.0]);
        let r = run_optics(&one, &OpticsParams::new(1.0, 2).unwrap()).unwrap();
        assert_eq!(r.ordering, vec![0]);
        assert_eq!(r.reachability, vec![None]);
        let empty = FeatureMatrix::<f64>::from_rows(&[]).unwrap();
        assert!(matches!(
            run_optics(&empty, &OpticsParams::new(1.0, 2).unwrap()),
            Err(Error::EmptyInput)
        ));
        let nan = FeatureMatrix::from_points_1d(&[f64::NAN, 1.0]);
        assert!(matches!(
            run_optics(&nan, &OpticsParams::new(1.0, 2).unwrap()),
            Err(Error::MissingValues)
        ));
    }

    #[test]
    fn far_apart_clouds_restart() {
        let pts: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).chain((0..5).map(|i| 100.0 + i as f64 * 0.1)).collect();
        let r = run_optics(&FeatureMatrix::from_points_1d(&pts), &OpticsParams::new(1.0, 3).unwrap()).unwrap();
        assert_eq!(r.reachability.iter().filter(|x| x.is_none()).count(), 2);
        assert_eq!(extract_clusters(&r, 0.5).unwrap().num_clusters, 2);
    }

    #[test]
    fn seeded_start_is_a_permutation_and_deterministic() {
        let pts: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let p = FeatureMatrix::from_points_1d(&pts);
        let mut params = OpticsParams::new(2.0, 3).unwrap();
        params.start = StartOrder::Seeded { seed: 9 };
        let a = run_optics(&p, &params).unwrap();
        let b = run_optics(&p, &params).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.ordering.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn params_validation() {
        assert!(OpticsParams::new(0.0, 5).is_err());
        assert!(OpticsParams::new(1.0, 1).is_err());
        assert!(OpticsParams::new(f64::INFINITY, 5).is_err());
    }

    #[test]
    fn k_distance_hand_check() {
        assert_eq!(k_distance_curve(&line(), 2).unwrap(), vec![2.0, 3.0, 3.0, 9.0]);
        assert!(matches!(k_distance_curve(&line(), 4), Err(Error::KTooLarge { .. })));
        let dup = FeatureMatrix::from_points_1d(&[1.0, 1.0, 5.0, 5.0, 9.0]);
        let c = k_distance_curve(&dup, 1).unwrap();
        assert_eq!(&c[..4], &[0.0; 4]);
    }

    #[test]
    fn suggest_eps_rules() {
        assert_eq!(suggest_eps(&[2.0, 3.0, 3.0, 9.0]).unwrap(), 3.0);
        assert_eq!(suggest_eps(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert!(matches!(suggest_eps(&[1.0, 2.0]), Err(Error::CurveTooShort(2))));
    }

    #[test]
    fn extraction_edge_cases() {
        let r = run_optics(&line(), &OpticsParams::new(5.0, 2).unwrap()).unwrap();
        let all_noise = extract_clusters(&r, 0.5).unwrap();
        assert_eq!(all_noise.noise_count(), 4);
        assert_eq!(all_noise.num_clusters, 0);
        assert!(matches!(extract_clusters(&r, 0.0), Err(Error::NonPositiveThreshold(_))));
        assert!(matches!(extract_clusters(&r, -1.0), Err(Error::NonPositiveThreshold(_))));
        let wide = extract_clusters(&r, 100.0).unwrap();
        assert_eq!(wide.sizes(), vec![3]);
    }

    #[test]
    fn dbscan_hand_check() {
        let l = dbscan_oracle(&line(), 2.5, 2).unwrap();
        assert_eq!(l.cluster_id, vec![0, 0, 0, NOISE]);
        let lonely = dbscan_oracle(&FeatureMatrix::from_points_1d(&[0.0, 50.0]), 1.0, 2).unwrap();
        assert_eq!(lonely.cluster_id, vec![NOISE, NOISE]);
    }

    #[test]
    fn suggested_threshold_sits_below_the_big_jump() {
        let r = OpticsResult {
            ordering: vec![0, 1, 2, 3, 4],
            reachability: vec![None, Some(0.2), Some(0.3), Some(4.0), Some(0.25)],
            core_distance: vec![Some(0.1); 5],
            predecessor: vec![None; 5],
            params: OpticsParams::new(5.0, 2).unwrap(),
        };
        assert_eq!(suggest_threshold(&r), Some(0.3));
    }

    #[test]
    fn works_in_single_precision() {
        let p = FeatureMatrix::<f32>::from_points_1d(&[0.0, 1.0, 3.0, 10.0]);
        let r = run_optics(&p, &OpticsParams::new(5.0f32, 2).unwrap()).unwrap();
        assert_eq!(r.reachability, vec![None, Some(1.0), Some(2.0), None]);
    }
}
