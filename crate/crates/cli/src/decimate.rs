//! Min/max decimation for plotting long series.

use fdd_core::time::Timestamp;

/// Default point budget per channel.
pub const MAX_POINTS: usize = 5000;

/// Reduces a series to at most `max_points` points. The rows are split into
/// `max_points / 2` contiguous buckets and each bucket keeps its smallest and
/// largest present value, in time order. Missing values are dropped once
/// decimation kicks in; shorter series are returned untouched.
pub fn decimate(timestamps: &[Timestamp], values: &[Option<f64>], max_points: usize) -> (Vec<Timestamp>, Vec<Option<f64>>) {
    let n = timestamps.len().min(values.len());
    if n <= max_points {
        return (timestamps[..n].to_vec(), values[..n].to_vec());
    }
    let buckets = (max_points / 2).max(1);
    let mut ts = Vec::with_capacity(2 * buckets);
    let mut vs = Vec::with_capacity(2 * buckets);
    for b in 0..buckets {
        let (lo, hi) = (b * n / buckets, (b + 1) * n / buckets);
        let mut min: Option<(usize, f64)> = None;
        let mut max: Option<(usize, f64)> = None;
        for (i, v) in values.iter().enumerate().take(hi).skip(lo) {
            let Some(v) = *v else { continue };
            if min.map_or(true, |(_, m)| v < m) {
                min = Some((i, v));
            }
            if max.map_or(true, |(_, m)| v > m) {
                max = Some((i, v));
            }
        }
        let mut keep: Vec<usize> = min.into_iter().chain(max).map(|(i, _)| i).collect();
        keep.sort_unstable();
        keep.dedup();
        for i in keep {
            ts.push(timestamps[i]);
            vs.push(values[i]);
        }
    }
    (ts, vs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_series_pass_through() {
        let ts = [0, 60, 120];
        let vs = [Some(1.0), None, Some(3.0)];
        assert_eq!(decimate(&ts, &vs, 10), (ts.to_vec(), vs.to_vec()));
    }

    #[test]
    fn keeps_extremes_and_budget() {
        let n = 20_011;
        let ts: Vec<i64> = (0..n).map(|i| i * 60).collect();
        let vs: Vec<Option<f64>> = (0..n)
            .map(|i| if i % 97 == 0 { None } else { Some(((i as f64) * 0.37).sin() * (i as f64).sqrt()) })
            .collect();
        let (dt, dv) = decimate(&ts, &vs, MAX_POINTS);
        assert!(dt.len() <= MAX_POINTS);
        assert!(dt.windows(2).all(|w| w[0] < w[1]));
        let max = |v: &[Option<f64>]| v.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[Option<f64>]| v.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(max(&dv), max(&vs));
        assert_eq!(min(&dv), min(&vs));
    }
}
