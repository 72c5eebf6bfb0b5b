//! Reduction of raw telemetry to the dense single-mode operating subset, and
//! column standardization.

use std::collections::BTreeMap;

use chrono::{NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesFrame;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use crate::time::{self, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Heating,
    Cooling,
    Excluded,
}

fn default_days() -> Vec<Weekday> {
    vec![Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri]
}

fn default_start() -> NaiveTime {
    NaiveTime::from_hms_opt(6, 0, 0).expect("valid time")
}

fn default_end() -> NaiveTime {
    NaiveTime::from_hms_opt(18, 0, 0).expect("valid time")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub cooling_signal: String,
    pub heating_signal: String,
    #[serde(default)]
    pub on_signal: Option<String>,
    #[serde(default = "default_days")]
    pub occupied_days: Vec<Weekday>,
    #[serde(default = "default_start")]
    pub occupied_start: NaiveTime,
    #[serde(default = "default_end")]
    pub occupied_end: NaiveTime,
    /// Forces the mode of specific months regardless of valve averages.
    #[serde(default)]
    pub month_overrides: BTreeMap<YearMonth, OperatingMode>,
}

impl ModeConfig {
    /// Mon-Fri 06:00-18:00 with the given valve channels.
    pub fn new(cooling_signal: impl Into<String>, heating_signal: impl Into<String>) -> Self {
        Self {
            cooling_signal: cooling_signal.into(),
            heating_signal: heating_signal.into(),
            on_signal: None,
            occupied_days: default_days(),
            occupied_start: default_start(),
            occupied_end: default_end(),
            month_overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.occupied_start >= self.occupied_end {
            return Err(Error::InvalidConfig(
                "occupied_start must precede occupied_end".into(),
            ));
        }
        if self.cooling_signal == self.heating_signal {
            return Err(Error::InvalidConfig(
                "cooling and heating signals must differ".into(),
            ));
        }
        Ok(())
    }

    /// Valve signal the IQR filter runs on for a given season.
    pub fn valve_for(&self, mode: OperatingMode) -> Option<&str> {
        match mode {
            OperatingMode::Cooling => Some(&self.cooling_signal),
            OperatingMode::Heating => Some(&self.heating_signal),
            OperatingMode::Excluded => None,
        }
    }
}

/// Labels each calendar month by comparing mean cooling and heating valve
/// openings over its rows.
pub fn classify_months(frame: &TimeSeriesFrame, config: &ModeConfig) -> Result<BTreeMap<YearMonth, OperatingMode>> {
    let cooling = frame.channel(&config.cooling_signal)?;
    let heating = frame.channel(&config.heating_signal)?;

    // (sum, count) per month for each valve
    let mut acc: BTreeMap<YearMonth, [(f64, usize); 2]> = BTreeMap::new();
    for (i, &ts) in frame.timestamps().iter().enumerate() {
        let e = acc.entry(time::year_month(ts)).or_insert([(0.0, 0); 2]);
        if let Some(v) = cooling[i] {
            e[0].0 += v;
            e[0].1 += 1;
        }
        if let Some(v) = heating[i] {
            e[1].0 += v;
            e[1].1 += 1;
        }
    }

    let mut out: BTreeMap<YearMonth, OperatingMode> = acc
        .into_iter()
        .map(|(month, [(cs, cn), (hs, hn)])| {
            let mode = if cn == 0 || hn == 0 {
                OperatingMode::Excluded
            } else {
                let (c, h) = (cs / cn as f64, hs / hn as f64);
                if c > h {
                    OperatingMode::Cooling
                } else if c < h {
                    OperatingMode::Heating
                } else {
                    OperatingMode::Excluded
                }
            };
            (month, mode)
        })
        .collect();
    for (month, mode) in &config.month_overrides {
        out.insert(*month, *mode);
    }
    Ok(out)
}

/// Keeps the rows whose month is labelled `mode`.
pub fn select_mode(
    frame: &TimeSeriesFrame,
    months: &BTreeMap<YearMonth, OperatingMode>,
    mode: OperatingMode,
) -> TimeSeriesFrame {
    let ts = frame.timestamps();
    frame.retain_rows(|i| months.get(&time::year_month(ts[i])) == Some(&mode))
}

/// Keeps rows where the unit is on and the building is occupied
/// (start inclusive, end exclusive).
pub fn filter_operational(frame: &TimeSeriesFrame, config: &ModeConfig) -> Result<TimeSeriesFrame> {
    let on = match &config.on_signal {
        Some(name) => Some(frame.channel(name)?),
        None => None,
    };
    let start = config.occupied_start.num_seconds_from_midnight();
    let end = config.occupied_end.num_seconds_from_midnight();
    let ts = frame.timestamps();
    Ok(frame.retain_rows(|i| {
        let is_on = on.map_or(true, |s| matches!(s[i], Some(v) if v != 0.0));
        let tod = time::seconds_of_day(ts[i]);
        is_on && config.occupied_days.contains(&time::weekday(ts[i])) && start <= tod && tod < end
    }))
}

/// Linear-interpolation quantile between closest ranks on sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First and third quartiles of the non-missing values.
pub fn quartiles(values: &[Option<f64>]) -> Result<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.len() < 4 {
        return Err(Error::TooFewRows {
            needed: 4,
            found: v.len(),
        });
    }
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75)))
}

/// Keeps rows whose `signal` lies in [Q1, Q3].
pub fn iqr_filter(frame: &TimeSeriesFrame, signal: &str) -> Result<TimeSeriesFrame> {
    let values = frame.channel(signal)?;
    let (q1, q3) = quartiles(values)?;
    Ok(frame.retain_rows(|i| matches!(values[i], Some(v) if q1 <= v && v <= q3)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
    pub kept_columns: Vec<String>,
    /// Zero-variance columns removed before scaling.
    pub dropped_columns: Vec<String>,
}

impl<T: Scalar> StandardScaler<T> {
    pub fn transform(&self, matrix: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let idx = self
            .kept_columns
            .iter()
            .map(|c| matrix.column_index(c).ok_or(Error::SchemaMismatch))
            .collect::<Result<Vec<_>>>()?;
        let mut out = DenseMatrix::zeros(matrix.rows(), idx.len());
        for i in 0..matrix.rows() {
            let src = matrix.row(i);
            for (j, &c) in idx.iter().enumerate() {
                out[(i, j)] = (src[c] - self.means[j]) / self.stds[j];
            }
        }
        FeatureMatrix::new(out, self.kept_columns.clone(), matrix.timestamps.clone())
    }

    pub fn inverse_transform(&self, matrix: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if matrix.column_names != self.kept_columns {
            return Err(Error::SchemaMismatch);
        }
        let mut out = matrix.values.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.stds[j] + self.means[j];
            }
        }
        FeatureMatrix::new(out, self.kept_columns.clone(), matrix.timestamps.clone())
    }
}

fn column_mean_std<T: Scalar>(m: &DenseMatrix<T>, j: usize) -> (T, T) {
    let n = T::from_usize_lossy(m.rows());
    let mean = (0..m.rows()).map(|i| m[(i, j)]).fold(T::zero(), |a, b| a + b) / n;
    let ss = (0..m.rows())
        .map(|i| {
            let d = m[(i, j)] - mean;
            d * d
        })
        .fold(T::zero(), |a, b| a + b);
    (mean, (ss / (n - T::one())).sqrt())
}

/// Scales each column to zero mean and unit sample variance, dropping
/// constant columns.
pub fn standardize<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<(FeatureMatrix<T>, StandardScaler<T>)> {
    if matrix.rows() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            found: matrix.rows(),
        });
    }
    let tol = T::from_f64_lossy(1e-12);
    let mut scaler = StandardScaler {
        means: Vec::new(),
        stds: Vec::new(),
        kept_columns: Vec::new(),
        dropped_columns: Vec::new(),
    };
    for (j, name) in matrix.column_names.iter().enumerate() {
        let (mean, std) = column_mean_std(&matrix.values, j);
        if std <= tol * mean.abs().max(T::one()) || !std.is_finite() {
            scaler.dropped_columns.push(name.clone());
        } else {
            scaler.means.push(mean);
            scaler.stds.push(std);
            scaler.kept_columns.push(name.clone());
        }
    }
    if scaler.kept_columns.is_empty() {
        return Err(Error::AllColumnsDegenerate);
    }
    let scaled = scaler.transform(matrix)?;
    Ok((scaled, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Channel;
    use chrono::NaiveDate;

    fn ts(y: i32, m: u32, d: u32, h: u32, min: u32) -> i64 {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
            .and_utc()
            .timestamp()
    }

    fn frame(ts: Vec<i64>, cols: Vec<(&str, Vec<Option<f64>>)>) -> TimeSeriesFrame {
        let cadence = 60;
        let channels = cols
            .into_iter()
            .map(|(n, v)| Channel {
                name: n.into(),
                values: v,
            })
            .collect();
        TimeSeriesFrame::new(ts, cadence, channels, None).unwrap()
    }

    #[test]
    fn months_follow_mean_valve_opening() {
        let f = frame(
            vec![ts(2018, 1, 3, 9, 0), ts(2018, 2, 1, 9, 0), ts(2018, 6, 4, 9, 0), ts(2018, 6, 4, 9, 1)],
            vec![
                ("CLG-O", vec![Some(0.0), Some(0.0), Some(0.8), Some(0.6)]),
                ("HTG-O", vec![Some(0.7), Some(0.0), Some(0.1), Some(0.0)]),
            ],
        );
        let months = classify_months(&f, &ModeConfig::new("CLG-O", "HTG-O")).unwrap();
        let get = |s: &str| months[&s.parse::<YearMonth>().unwrap()];
        assert_eq!(get("2018-01"), OperatingMode::Heating);
        assert_eq!(get("2018-02"), OperatingMode::Excluded);
        assert_eq!(get("2018-06"), OperatingMode::Cooling);

        let only_june = select_mode(&f, &months, OperatingMode::Cooling);
        assert_eq!(only_june.len(), 2);
    }

    #[test]
    fn month_overrides_win() {
        let f = frame(
            vec![ts(2018, 6, 4, 9, 0)],
            vec![("CLG-O", vec![Some(0.8)]), ("HTG-O", vec![Some(0.1)])],
        );
        let mut cfg = ModeConfig::new("CLG-O", "HTG-O");
        cfg.month_overrides.insert("2018-06".parse().unwrap(), OperatingMode::Excluded);
        let months = classify_months(&f, &cfg).unwrap();
        assert_eq!(months.values().next(), Some(&OperatingMode::Excluded));
        let missing = ModeConfig::new("CLG-O", "nope");
        assert!(matches!(classify_months(&f, &missing), Err(Error::MissingChannel(_))));
    }

    #[test]
    fn operational_filter_boundaries() {
        // 2018-06-02 is a Saturday, 2018-06-04 a Monday.
        let f = frame(
            vec![
                ts(2018, 6, 2, 10, 0),
                ts(2018, 6, 4, 5, 59),
                ts(2018, 6, 4, 6, 0),
                ts(2018, 6, 4, 12, 0),
                ts(2018, 6, 4, 17, 59),
                ts(2018, 6, 4, 18, 0),
            ],
            vec![("ON", vec![Some(1.0), Some(1.0), Some(1.0), Some(0.0), Some(1.0), Some(1.0)])],
        );
        let mut cfg = ModeConfig::new("CLG-O", "HTG-O");
        cfg.on_signal = Some("ON".into());
        let kept = filter_operational(&f, &cfg).unwrap();
        assert_eq!(kept.timestamps(), &[ts(2018, 6, 4, 6, 0), ts(2018, 6, 4, 17, 59)]);

        cfg.on_signal = None;
        assert_eq!(filter_operational(&f, &cfg).unwrap().len(), 3);
    }

    #[test]
    fn type7_quartiles_match_brute_force() {
        // Oracle: position h = (n-1)p, interpolate between floor(h) and floor(h)+1.
        let values: Vec<Option<f64>> = (1..=8).map(|v| Some(v as f64)).collect();
        let (q1, q3) = quartiles(&values).unwrap();
        assert_eq!((q1, q3), (2.75, 6.25));

        let ts: Vec<i64> = (0..8).map(|i| i * 60).collect();
        let f = frame(ts, vec![("CLG-O", values)]);
        let kept = iqr_filter(&f, "CLG-O").unwrap();
        let v: Vec<f64> = kept.channel("CLG-O").unwrap().iter().flatten().copied().collect();
        assert_eq!(v, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn iqr_on_constant_keeps_everything_and_needs_four_rows() {
        let f = frame(vec![0, 60, 120, 180, 240], vec![("v", vec![Some(2.0); 5])]);
        assert_eq!(iqr_filter(&f, "v").unwrap().len(), 5);
        let g = frame(vec![0, 60, 120], vec![("v", vec![Some(1.0); 3])]);
        assert!(matches!(iqr_filter(&g, "v"), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn standardize_simple_column() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let (s, scaler) = standardize(&m).unwrap();
        assert_eq!(s.values.column(0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(scaler.dropped_columns, vec!["x1".to_string()]);
        assert_eq!(s.cols(), 1);

        let (again, _) = standardize(&s).unwrap();
        assert!(again.values.max_abs_diff(&s.values) < 1e-12);
    }

    #[test]
    fn standardize_errors() {
        let one = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(standardize(&one), Err(Error::TooFewRows { .. })));
        let flat = FeatureMatrix::from_rows(&[vec![0.1], vec![0.1], vec![0.1]]).unwrap();
        assert!(matches!(standardize(&flat), Err(Error::AllColumnsDegenerate)));
    }

    #[test]
    fn mode_config_validation_and_serde() {
        let cfg: ModeConfig = serde_json::from_str(
            r#"{"cooling_signal":"CLG-O","heating_signal":"HTG-O","occupied_days":["Mon","Tue"],
                "occupied_start":"06:00:00","occupied_end":"18:00:00"}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.occupied_days.len(), 2);
        let mut bad = cfg.clone();
        bad.heating_signal = "CLG-O".into();
        assert!(bad.validate().is_err());
    }
}
