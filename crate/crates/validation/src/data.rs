use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Up to 300 rows in 1 to 5 dimensions. `index % 3` picks Gaussian blobs,
/// uniform noise, or a mix of both; every fifth index is snapped to a
/// half-unit grid so exact distance ties occur.
pub fn random_points(rng: &mut impl Rng, index: usize) -> Vec<Vec<f64>> {
    let m = rng.gen_range(2..=300);
    let n = rng.gen_range(1..=5);
    let kind = index % 3;
    let centres: Vec<Vec<f64>> = (0..rng.gen_range(1..=4))
        .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
        .collect();
    let spread = Normal::new(0.0, rng.gen_range(0.3..1.2)).expect("positive sd");
    let mut points: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let uniform = kind == 1 || (kind == 2 && rng.gen_bool(0.3));
            if uniform {
                (0..n).map(|_| rng.gen_range(0.0..10.0)).collect()
            } else {
                let c = &centres[rng.gen_range(0..centres.len())];
                c.iter().map(|&x| x + spread.sample(rng)).collect()
            }
        })
        .collect();
    if index % 5 == 4 {
        for x in points.iter_mut().flatten() {
            *x = (*x * 2.0).round() / 2.0;
        }
    }
    points
}

/// 75th percentile of each row's distance to its `min_pts`-th point (self
/// included), floored at 1e-3.
pub fn generating_eps(d: &[Vec<f64>], min_pts: usize) -> f64 {
    let mut kth: Vec<f64> = d
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[(min_pts - 1).min(r.len() - 1)]
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    kth[kth.len() * 3 / 4].max(1e-3)
}

/// `m` rows of `n` correlated Gaussian channels with distinct offsets,
/// `n + 2 <= m <= 500`, `n <= 30`.
pub fn correlated_rows(rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = rng.gen_range(1..=30);
    let m = rng.gen_range(n + 2..=500);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mixing: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal.sample(rng)).collect()).collect();
    (0..m)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            (0..n)
                .map(|j| z[j] + 0.5 * (0..n).map(|k| mixing[j][k] * z[k]).sum::<f64>() + 3.0 * j as f64)
                .collect()
        })
        .collect()
}
