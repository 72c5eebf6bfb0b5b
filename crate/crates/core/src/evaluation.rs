//! Cluster labels to fault flags, confusion counts, classification metrics
//! and fault-interval reporting. The positive class is "fault".

use serde::{Deserialize, Serialize};

use crate::dataset::{FaultFlag, FaultInterval};
use crate::error::{Error, Result};
use crate::optics::NOISE;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagAssignment {
    pub flags: Vec<FaultFlag>,
    /// Cluster treated as normal operation.
    pub normal_cluster: i64,
    /// Another cluster had the same size as the normal one.
    pub ambiguous_majority: bool,
}

/// Largest cluster is normal (ties to the lowest id); every other cluster
/// and all noise are faults.
pub fn assign_fault_flags(cluster_ids: &[i64]) -> Result<FlagAssignment> {
    let k = cluster_ids.iter().copied().max().unwrap_or(NOISE);
    if k < 0 {
        return Err(Error::AllNoise);
    }
    let mut sizes = vec![0usize; k as usize + 1];
    for &c in cluster_ids.iter().filter(|&&c| c >= 0) {
        sizes[c as usize] += 1;
    }
    let max = *sizes.iter().max().expect("non-empty");
    let normal = sizes.iter().position(|&s| s == max).expect("max present");
    let ambiguous = sizes.iter().filter(|&&s| s == max).count() > 1;
    let normal = normal as i64;
    Ok(FlagAssignment {
        flags: cluster_ids
            .iter()
            .map(|&c| FaultFlag::from_bool(c != normal))
            .collect(),
        normal_cluster: normal,
        ambiguous_majority: ambiguous,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion_counts(pred: &[FaultFlag], truth: &[FaultFlag]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p.is_fault(), t.is_fault()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Undefined ratios are NaN in memory and `null` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    #[serde(with = "nan_as_null")]
    pub recall: f64,
    #[serde(with = "nan_as_null")]
    pub f1: f64,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<MetricsRow> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsRow {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, total),
    })
}

/// Three decimals, ties to even; `NaN` for undefined values.
pub fn format_metric(v: f64) -> String {
    if v.is_nan() {
        return "NaN".to_string();
    }
    format!("{:.3}", (v * 1000.0).round_ties_even() / 1000.0)
}

impl MetricsRow {
    /// `precision recall f1 accuracy`, space separated.
    pub fn display_line(&self) -> String {
        [self.precision, self.recall, self.f1, self.accuracy]
            .iter()
            .map(|&v| format_metric(v))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Maximal runs of fault rows. A timestamp gap wider than twice the cadence
/// ends a run even when rows on both sides are faults.
pub fn fault_intervals(flags: &[FaultFlag], timestamps: &[Timestamp], cadence_s: u32) -> Result<Vec<FaultInterval>> {
    if flags.len() != timestamps.len() {
        return Err(Error::LengthMismatch {
            left: flags.len(),
            right: timestamps.len(),
        });
    }
    let max_gap = 2 * i64::from(cadence_s);
    let mut out = Vec::new();
    let mut open: Option<(Timestamp, Timestamp)> = None;
    for (flag, &ts) in flags.iter().zip(timestamps) {
        open = match (flag.is_fault(), open) {
            (true, Some((start, last))) if ts - last <= max_gap => Some((start, ts)),
            (true, prev) => {
                if let Some((s, e)) = prev {
                    out.push(FaultInterval { start: s, end: e, label: String::new() });
                }
                Some((ts, ts))
            }
            (false, prev) => {
                if let Some((s, e)) = prev {
                    out.push(FaultInterval { start: s, end: e, label: String::new() });
                }
                None
            }
        };
    }
    if let Some((s, e)) = open {
        out.push(FaultInterval { start: s, end: e, label: String::new() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FaultFlag::{Fault as F, Normal as N};

    #[test]
    fn majority_cluster_is_normal() {
        let mut ids = vec![0i64; 900];
        ids.extend(std::iter::repeat(1).take(50));
        ids.extend(std::iter::repeat(NOISE).take(10));
        let a = assign_fault_flags(&ids).unwrap();
        assert_eq!(a.flags.iter().filter(|f| f.is_fault()).count(), 60);
        assert!(!a.ambiguous_majority);

        let one = assign_fault_flags(&[0, 0, 0]).unwrap();
        assert!(one.flags.iter().all(|f| !f.is_fault()));
    }

    #[test]
    fn tie_goes_to_lowest_id_and_is_flagged() {
        let a = assign_fault_flags(&[1, 1, 0, 0]).unwrap();
        assert_eq!(a.normal_cluster, 0);
        assert!(a.ambiguous_majority);
        assert_eq!(a.flags, vec![F, F, N, N]);
    }

    #[test]
    fn relabeling_does_not_change_flags() {
        let a = assign_fault_flags(&[0, 0, 0, 1, 2, NOISE]).unwrap();
        let b = assign_fault_flags(&[2, 2, 2, 0, 1, NOISE]).unwrap();
        assert_eq!(a.flags, b.flags);
    }

    #[test]
    fn all_noise_is_an_error() {
        assert!(matches!(assign_fault_flags(&[NOISE, NOISE]), Err(Error::AllNoise)));
        assert!(matches!(assign_fault_flags(&[]), Err(Error::AllNoise)));
    }

    #[test]
    fn confusion_basics() {
        let truth: Vec<_> = (0..100).map(|i| FaultFlag::from_bool(i < 10)).collect();
        assert_eq!(confusion_counts(&truth, &truth).unwrap(), ConfusionCounts::new(10, 0, 0, 90));
        let normal = vec![N; 100];
        assert_eq!(confusion_counts(&normal, &truth).unwrap(), ConfusionCounts::new(0, 0, 10, 90));
        assert!(confusion_counts(&normal[..3], &truth).is_err());
    }

    #[test]
    fn confusion_total_exhaustive_small() {
        // every pair of flag vectors of length 4
        for a in 0u8..16 {
            for b in 0u8..16 {
                let p: Vec<_> = (0..4).map(|i| FaultFlag::from_bool(a >> i & 1 == 1)).collect();
                let t: Vec<_> = (0..4).map(|i| FaultFlag::from_bool(b >> i & 1 == 1)).collect();
                let c = confusion_counts(&p, &t).unwrap();
                assert_eq!(c.total(), 4);
                assert_eq!(c.tp + c.fp, u64::from(a.count_ones()));
                assert_eq!(c.tp + c.fn_, u64::from(b.count_ones()));
            }
        }
    }

    #[test]
    fn metric_edge_cases() {
        let m = classification_metrics(&ConfusionCounts::new(0, 46, 4279, 22450)).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert!(m.f1.is_nan());
        assert_eq!(m.display_line(), "0.000 0.000 NaN 0.838");

        let none_pred = classification_metrics(&ConfusionCounts::new(0, 0, 5, 5)).unwrap();
        assert!(none_pred.precision.is_nan());
        assert!(none_pred.f1.is_nan());
        assert!(matches!(
            classification_metrics(&ConfusionCounts::default()),
            Err(Error::EmptyCounts)
        ));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"f1\":null"));
        let back: MetricsRow = serde_json::from_str(&json).unwrap();
        assert!(back.f1.is_nan());
    }

    #[test]
    fn display_matches_table_row() {
        // accuracy is 26766/26775 = 0.99966, which rounds up
        let m = classification_metrics(&ConfusionCounts::new(7219, 0, 9, 19547)).unwrap();
        assert_eq!(m.display_line(), "1.000 0.999 0.999 1.000");
        assert_eq!(format_metric(0.0625), "0.062");
    }

    #[test]
    fn intervals_from_runs() {
        let ts: Vec<i64> = (0..8).map(|i| i * 60).collect();
        assert!(fault_intervals(&[N; 8], &ts, 60).unwrap().is_empty());
        let flags = [N, F, F, F, N, N, N, N];
        let iv = fault_intervals(&flags, &ts, 60).unwrap();
        assert_eq!(iv.len(), 1);
        assert_eq!((iv[0].start, iv[0].end), (60, 180));
    }

    #[test]
    fn wide_gap_splits_a_run() {
        let ts = [0, 60, 120, 600, 660];
        let iv = fault_intervals(&[F; 5], &ts, 60).unwrap();
        assert_eq!(iv.iter().map(|i| (i.start, i.end)).collect::<Vec<_>>(), vec![(0, 120), (600, 660)]);
        assert!(fault_intervals(&[F; 2], &ts, 60).is_err());
    }
}
