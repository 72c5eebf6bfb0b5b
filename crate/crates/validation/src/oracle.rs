use std::collections::HashMap;

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Full distance matrix.
pub fn pairwise(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|a| points.iter().map(|b| distance(a, b)).collect()).collect()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// DBSCAN at radius `t` reduced to what is unambiguous: which rows are core
/// (closed ball, self included) and the component id of each row in the
/// graph linking cores within `t`. Non-core rows keep their own id.
pub struct CorePartition {
    pub core: Vec<bool>,
    pub component: Vec<usize>,
}

pub fn dbscan_cores(d: &[Vec<f64>], t: f64, min_pts: usize) -> CorePartition {
    let m = d.len();
    let core: Vec<bool> = (0..m).map(|i| d[i].iter().filter(|&&x| x <= t).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..m).collect();
    for i in 0..m {
        for j in i + 1..m {
            if core[i] && core[j] && d[i][j] <= t {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let component = (0..m).map(|i| find(&mut parent, i)).collect();
    CorePartition { core, component }
}

impl CorePartition {
    /// True when `labels` (noise = `noise`) restricted to the core rows is a
    /// relabeling of the components.
    pub fn matches(&self, labels: &[i64], noise: i64) -> bool {
        let mut fwd: HashMap<usize, i64> = HashMap::new();
        let mut back: HashMap<i64, usize> = HashMap::new();
        for i in (0..self.core.len()).filter(|&i| self.core[i]) {
            let (c, l) = (self.component[i], labels[i]);
            if l == noise || *fwd.entry(c).or_insert(l) != l || *back.entry(l).or_insert(c) != c {
                return false;
            }
        }
        true
    }
}

/// `XᵀX / (m - 1)` by explicit triple loop; columns assumed centred.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let mut c = vec![vec![0.0; n]; n];
    for r in rows {
        for a in 0..n {
            for b in 0..n {
                c[a][b] += r[a] * r[b];
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v /= (m - 1) as f64);
    c
}

/// Precision, recall, F1 and accuracy straight from the definitions; `NaN`
/// for 0/0 and for F1 when precision + recall is zero or undefined.
pub fn metrics(tp: u64, fp: u64, fn_: u64, tn: u64) -> [f64; 4] {
    let div = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { f64::NAN };
    [p, r, f1, div(tp + tn, tp + fp + fn_ + tn)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_hand_check() {
        let d = pairwise(&[vec![0.0], vec![1.0], vec![3.0], vec![10.0]]);
        let p = dbscan_cores(&d, 2.5, 2);
        assert_eq!(p.core, [true, true, true, false]);
        assert!(p.matches(&[4, 4, 4, -1], -1));
        assert!(!p.matches(&[4, 5, 4, -1], -1));
        assert!(!p.matches(&[4, 4, -1, 4], -1));
    }

    #[test]
    fn metrics_by_hand() {
        let m = metrics(3, 1, 2, 4);
        for (got, want) in m.iter().zip([0.75, 0.6, 2.0 / 3.0, 0.7]) {
            assert!((got - want).abs() < 1e-15, "{m:?}");
        }
        let undefined = metrics(0, 0, 5, 5);
        assert!(undefined[0].is_nan() && undefined[2].is_nan());
        assert_eq!(undefined[1], 0.0);
    }
}
