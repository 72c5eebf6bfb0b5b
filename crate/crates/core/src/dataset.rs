//! Telemetry ingestion, ground-truth labelling and label export.
//!
//! CSV layout: first column `timestamp` (ISO-8601), then one column per
//! channel designation, optionally a final `fault` column holding 0 or 1.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{self, Timestamp};

/// Largest share of non-modal timestamp gaps tolerated at load time.
pub const MAX_IRREGULAR_GAP_SHARE: f64 = 0.05;

/// Cadence assumed for frames too short to infer one.
pub const DEFAULT_CADENCE_S: u32 = 60;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Temperature,
    Flow,
    ValveCommand,
    AirQuality,
    BinaryStatus,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub designation: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub unit: String,
}

impl ChannelSchema {
    pub fn new(designation: impl Into<String>, kind: ChannelKind) -> Self {
        Self {
            designation: designation.into(),
            description: String::new(),
            kind,
            unit: String::new(),
        }
    }
}

/// Checks that designations are non-empty and unique.
pub fn validate_schema(schema: &[ChannelSchema]) -> Result<()> {
    let mut seen = HashSet::new();
    for ch in schema {
        if ch.designation.trim().is_empty() {
            return Err(Error::InvalidSchema("empty designation".into()));
        }
        if !seen.insert(ch.designation.as_str()) {
            return Err(Error::InvalidSchema(format!(
                "duplicate designation `{}`",
                ch.designation
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultFlag {
    Normal,
    Fault,
}

impl FaultFlag {
    pub fn is_fault(self) -> bool {
        self == FaultFlag::Fault
    }

    pub fn from_bool(fault: bool) -> Self {
        if fault {
            FaultFlag::Fault
        } else {
            FaultFlag::Normal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    /// `None` marks a missing or unparseable sample.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    timestamps: Vec<Timestamp>,
    utc_offset_s: i32,
    cadence_s: u32,
    channels: Vec<Channel>,
    ground_truth: Option<Vec<FaultFlag>>,
}

impl TimeSeriesFrame {
    pub fn new(
        timestamps: Vec<Timestamp>,
        cadence_s: u32,
        channels: Vec<Channel>,
        ground_truth: Option<Vec<FaultFlag>>,
    ) -> Result<Self> {
        if cadence_s == 0 {
            return Err(Error::IrregularCadence("cadence must be positive".into()));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotonicTimestamps { row: i + 1 });
            }
            if (w[1] - w[0]) % i64::from(cadence_s) != 0 {
                return Err(Error::IrregularCadence(format!(
                    "gap of {} s at row {} is not a multiple of {cadence_s} s",
                    w[1] - w[0],
                    i + 1
                )));
            }
        }
        let mut names = HashSet::new();
        for ch in &channels {
            if !names.insert(ch.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate channel `{}`", ch.name)));
            }
            if ch.values.len() != timestamps.len() {
                return Err(Error::LengthMismatch {
                    left: timestamps.len(),
                    right: ch.values.len(),
                });
            }
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != timestamps.len() {
                return Err(Error::LengthMismatch {
                    left: timestamps.len(),
                    right: gt.len(),
                });
            }
        }
        Ok(Self {
            timestamps,
            utc_offset_s: 0,
            cadence_s,
            channels,
            ground_truth,
        })
    }

    pub fn with_utc_offset(mut self, utc_offset_s: i32) -> Self {
        self.utc_offset_s = utc_offset_s;
        self
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn cadence_s(&self) -> u32 {
        self.cadence_s
    }

    pub fn utc_offset_s(&self) -> i32 {
        self.utc_offset_s
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn channel(&self, name: &str) -> Result<&[Option<f64>]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn ground_truth(&self) -> Option<&[FaultFlag]> {
        self.ground_truth.as_deref()
    }

    pub fn with_ground_truth(mut self, flags: Vec<FaultFlag>) -> Result<Self> {
        if flags.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: flags.len(),
            });
        }
        self.ground_truth = Some(flags);
        Ok(self)
    }

    /// Keeps rows for which `keep(row)` is true, preserving order and values.
    pub fn retain_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mask: Vec<bool> = (0..self.len()).map(&mut keep).collect();
        let pick = |v: &[Option<f64>]| -> Vec<Option<f64>> {
            v.iter().zip(&mask).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
        };
        Self {
            timestamps: self
                .timestamps
                .iter()
                .zip(&mask)
                .filter(|(_, &k)| k)
                .map(|(t, _)| *t)
                .collect(),
            utc_offset_s: self.utc_offset_s,
            cadence_s: self.cadence_s,
            channels: self
                .channels
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    values: pick(&c.values),
                })
                .collect(),
            ground_truth: self.ground_truth.as_ref().map(|gt| {
                gt.iter()
                    .zip(&mask)
                    .filter(|(_, &k)| k)
                    .map(|(f, _)| *f)
                    .collect()
            }),
        }
    }
}

/// Modal gap (ties to the smallest) and validation against it.
fn infer_cadence(timestamps: &[Timestamp]) -> Result<u32> {
    if timestamps.len() < 2 {
        return Ok(DEFAULT_CADENCE_S);
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in timestamps.windows(2) {
        *counts.entry(w[1] - w[0]).or_default() += 1;
    }
    let (&modal, &modal_count) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("at least one gap");
    let gaps = timestamps.len() - 1;
    let irregular = gaps - modal_count;
    if irregular as f64 > MAX_IRREGULAR_GAP_SHARE * gaps as f64 {
        return Err(Error::IrregularCadence(format!(
            "{irregular} of {gaps} gaps differ from the modal {modal} s"
        )));
    }
    u32::try_from(modal).map_err(|_| Error::IrregularCadence(format!("modal gap {modal} s")))
}

fn parse_value(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a telemetry CSV. Every header after `timestamp` must be a schema
/// designation (or the trailing `fault` column).
pub fn load_frame(
    path: impl AsRef<Path>,
    schema: &[ChannelSchema],
    timestamp_format: Option<&str>,
) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_frame(&bytes, schema, timestamp_format)
}

pub fn parse_frame(
    bytes: &[u8],
    schema: &[ChannelSchema],
    timestamp_format: Option<&str>,
) -> Result<TimeSeriesFrame> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    if !headers[0].eq_ignore_ascii_case("timestamp") {
        return Err(Error::InvalidSchema(format!(
            "first column must be `timestamp`, found `{}`",
            &headers[0]
        )));
    }
    let has_fault = headers.len() > 1 && headers[headers.len() - 1].eq_ignore_ascii_case("fault");
    let channel_end = if has_fault { headers.len() - 1 } else { headers.len() };
    let names: Vec<String> = headers.iter().take(channel_end).skip(1).map(str::to_string).collect();
    for name in &names {
        if !schema.iter().any(|c| &c.designation == name) {
            return Err(Error::UnknownChannel(name.clone()));
        }
    }

    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    let mut faults = Vec::new();
    let mut offset = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        let (ts, off) = time::parse_timestamp(raw, timestamp_format).ok_or_else(|| {
            Error::BadTimestamp {
                row,
                value: raw.to_string(),
            }
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::NonMonotonicTimestamps { row });
            }
        }
        if off.is_some() {
            offset = off;
        }
        timestamps.push(ts);
        for (j, col) in values.iter_mut().enumerate() {
            col.push(record.get(j + 1).and_then(parse_value));
        }
        if has_fault {
            let cell = record.get(channel_end).unwrap_or("").trim();
            faults.push(match cell {
                "0" => FaultFlag::Normal,
                "1" => FaultFlag::Fault,
                other => {
                    return Err(Error::BadFaultValue {
                        row,
                        value: other.to_string(),
                    })
                }
            });
        }
    }
    if timestamps.is_empty() {
        return Err(Error::EmptyFile);
    }
    let cadence = infer_cadence(&timestamps)?;
    let channels = names
        .into_iter()
        .zip(values)
        .map(|(name, values)| Channel { name, values })
        .collect();
    let frame = TimeSeriesFrame::new(timestamps, cadence, channels, has_fault.then_some(faults))?;
    Ok(frame.with_utc_offset(offset.unwrap_or(0)))
}

/// Serializes a frame in the ingest CSV layout. Values use the shortest
/// representation that parses back to the same bits.
pub fn frame_to_csv(frame: &TimeSeriesFrame) -> String {
    let mut out = String::from("timestamp");
    for ch in frame.channels() {
        out.push(',');
        out.push_str(&ch.name);
    }
    if frame.ground_truth().is_some() {
        out.push_str(",fault");
    }
    out.push('\n');
    for (i, &ts) in frame.timestamps().iter().enumerate() {
        out.push_str(&time::format_with_offset(ts, frame.utc_offset_s()));
        for ch in frame.channels() {
            out.push(',');
            if let Some(v) = ch.values[i] {
                let _ = write!(out, "{v:?}");
            }
        }
        if let Some(gt) = frame.ground_truth() {
            out.push_str(if gt[i].is_fault() { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

pub fn write_frame(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, frame_to_csv(frame)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInterval {
    #[serde(with = "time::iso")]
    pub start: Timestamp,
    #[serde(with = "time::iso")]
    pub end: Timestamp,
    #[serde(default)]
    pub label: String,
}

impl FaultInterval {
    pub fn new(start: Timestamp, end: Timestamp, label: impl Into<String>) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!(
                "interval start {} is after end {}",
                time::format_timestamp(start),
                time::format_timestamp(end)
            )));
        }
        Ok(Self {
            start,
            end,
            label: label.into(),
        })
    }

    /// Closed on both ends.
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }
}

/// Replaces the frame's ground truth: a row is a fault iff its timestamp
/// falls inside any interval.
pub fn apply_fault_intervals(frame: &TimeSeriesFrame, intervals: &[FaultInterval]) -> TimeSeriesFrame {
    let flags = frame
        .timestamps()
        .iter()
        .map(|&ts| FaultFlag::from_bool(intervals.iter().any(|iv| iv.contains(ts))))
        .collect();
    frame
        .clone()
        .with_ground_truth(flags)
        .expect("flag count matches row count")
}

/// One exported label line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    #[serde(with = "time::iso")]
    pub timestamp: Timestamp,
    /// -1 marks noise.
    pub cluster_id: i64,
    pub fault: bool,
}

impl LabelRow {
    pub fn is_noise(&self) -> bool {
        self.cluster_id < 0
    }
}

pub fn label_rows(
    timestamps: &[Timestamp],
    cluster_ids: &[i64],
    flags: &[FaultFlag],
) -> Result<Vec<LabelRow>> {
    if timestamps.len() != cluster_ids.len() {
        return Err(Error::LengthMismatch {
            left: timestamps.len(),
            right: cluster_ids.len(),
        });
    }
    if timestamps.len() != flags.len() {
        return Err(Error::LengthMismatch {
            left: timestamps.len(),
            right: flags.len(),
        });
    }
    Ok(timestamps
        .iter()
        .zip(cluster_ids)
        .zip(flags)
        .map(|((&timestamp, &cluster_id), flag)| LabelRow {
            timestamp,
            cluster_id,
            fault: flag.is_fault(),
        })
        .collect())
}

/// `timestamp,cluster_id,fault_flag,is_noise` CSV text.
pub fn labels_to_csv(rows: &[LabelRow]) -> String {
    let mut out = String::from("timestamp,cluster_id,fault_flag,is_noise\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            time::format_timestamp(r.timestamp),
            r.cluster_id,
            u8::from(r.fault),
            r.is_noise()
        );
    }
    out
}

pub fn export_labels(rows: &[LabelRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, labels_to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<LabelRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::Csv(format!("label row {row} has {} fields", record.len())));
        }
        let (timestamp, _) = time::parse_timestamp(&record[0], None).ok_or_else(|| {
            Error::BadTimestamp {
                row,
                value: record[0].to_string(),
            }
        })?;
        let cluster_id = record[1]
            .parse()
            .map_err(|_| Error::Csv(format!("bad cluster id `{}` at row {row}", &record[1])))?;
        let fault = match &record[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::BadFaultValue {
                    row,
                    value: other.to_string(),
                })
            }
        };
        rows.push(LabelRow {
            timestamp,
            cluster_id,
            fault,
        });
    }
    Ok(rows)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&bytes)
}

/// Reads a `timestamp,fault` truth file into a lookup table.
pub fn load_truth(path: impl AsRef<Path>) -> Result<BTreeMap<Timestamp, FaultFlag>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers()?.clone();
    let fault_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("fault"))
        .ok_or_else(|| Error::MissingChannel("fault".into()))?;
    let mut out = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let (ts, _) = time::parse_timestamp(&record[0], None).ok_or_else(|| Error::BadTimestamp {
            row,
            value: record[0].to_string(),
        })?;
        let flag = match record.get(fault_col).unwrap_or("") {
            "0" => FaultFlag::Normal,
            "1" => FaultFlag::Fault,
            other => {
                return Err(Error::BadFaultValue {
                    row,
                    value: other.to_string(),
                })
            }
        };
        out.insert(ts, flag);
    }
    Ok(out)
}
