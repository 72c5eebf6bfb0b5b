//! Timestamps are local building wall-clock time stored as integer seconds
//! since 1970-01-01T00:00:00 (no zone applied). A frame may carry the UTC
//! offset separately.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Timestamp = i64;

pub const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const FALLBACK_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%m-%d-%Y %H:%M",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
];

/// Parses a timestamp; returns local seconds and the UTC offset when the text
/// carries one.
pub fn parse_timestamp(text: &str, format: Option<&str>) -> Option<(Timestamp, Option<i32>)> {
    let text = text.trim();
    if let Some(fmt) = format {
        return NaiveDateTime::parse_from_str(text, fmt)
            .ok()
            .map(|dt| (dt.and_utc().timestamp(), None));
    }
    for fmt in FALLBACK_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some((dt.and_utc().timestamp(), None));
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        let offset = dt.offset().local_minus_utc();
        return Some((dt.naive_local().and_utc().timestamp(), Some(offset)));
    }
    // bare epoch seconds
    text.parse::<i64>().ok().map(|s| (s, None))
}

pub fn naive(ts: Timestamp) -> NaiveDateTime {
    DateTime::from_timestamp(ts, 0)
        .unwrap_or(DateTime::UNIX_EPOCH)
        .naive_utc()
}

pub fn format_timestamp(ts: Timestamp) -> String {
    naive(ts).format(ISO_FORMAT).to_string()
}

/// ISO-8601 with an explicit offset when it is nonzero.
pub fn format_with_offset(ts: Timestamp, utc_offset_s: i32) -> String {
    if utc_offset_s == 0 {
        return format_timestamp(ts);
    }
    let sign = if utc_offset_s < 0 { '-' } else { '+' };
    let abs = utc_offset_s.unsigned_abs();
    format!(
        "{}{}{:02}:{:02}",
        format_timestamp(ts),
        sign,
        abs / 3600,
        (abs % 3600) / 60
    )
}

pub fn weekday(ts: Timestamp) -> Weekday {
    naive(ts).weekday()
}

pub fn seconds_of_day(ts: Timestamp) -> u32 {
    naive(ts).num_seconds_from_midnight()
}

pub fn year_month(ts: Timestamp) -> YearMonth {
    let dt = naive(ts);
    YearMonth {
        year: dt.year(),
        month: dt.month(),
    }
}

/// Calendar month key, rendered `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in `{s}`"));
        }
        Ok(YearMonth { year, month })
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: `Timestamp` as an ISO-8601 local time string.
pub mod iso {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let s = String::deserialize(d)?;
        parse_timestamp(&s, None)
            .map(|(ts, _)| ts)
            .ok_or_else(|| serde::de::Error::custom(format!("unparseable timestamp `{s}`")))
    }
}

/// Serde adapter for `Vec<Timestamp>` as ISO strings.
pub mod iso_vec {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &[Timestamp], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ts.iter().map(|t| format_timestamp(*t)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Timestamp>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| {
                parse_timestamp(s, None)
                    .map(|(ts, _)| ts)
                    .ok_or_else(|| serde::de::Error::custom(format!("unparseable timestamp `{s}`")))
            })
            .collect()
    }
}
