//! Multi-channel time series at a uniform cadence, plus the preprocessing
//! steps that operate on whole frames.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    /// Measured on site; only past values are usable as features.
    InSitu,
    /// Numerical weather prediction output; values around the target time are usable.
    Nwp,
    /// Measured on site and forecast. Windowed like [`ChannelRole::InSitu`].
    Target,
}

impl ChannelRole {
    pub fn is_observed(self) -> bool {
        matches!(self, ChannelRole::InSitu | ChannelRole::Target)
    }
}

/// Declaration of one CSV column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDecl {
    pub name: String,
    pub role: ChannelRole,
    #[serde(default)]
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub role: ChannelRole,
    pub unit: String,
    /// `None` marks a missing sample.
    pub values: Vec<Option<f64>>,
}

impl Channel {
    pub fn new(
        name: impl Into<String>,
        role: ChannelRole,
        unit: impl Into<String>,
        values: Vec<Option<f64>>,
    ) -> Self {
        Self {
            name: name.into(),
            role,
            unit: unit.into(),
            values,
        }
    }

    pub fn from_dense(
        name: impl Into<String>,
        role: ChannelRole,
        unit: impl Into<String>,
        values: &[f64],
    ) -> Self {
        Self::new(name, role, unit, values.iter().map(|&v| Some(v)).collect())
    }
}

/// Uniformly sampled multi-channel series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    start: NaiveDateTime,
    cadence: TimeDelta,
    channels: Vec<Channel>,
}

impl TimeSeriesFrame {
    pub fn new(start: NaiveDateTime, cadence: TimeDelta, channels: Vec<Channel>) -> Result<Self> {
        if cadence <= TimeDelta::zero() {
            return Err(Error::invalid("cadence must be strictly positive"));
        }
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateChannel(c.name.clone()));
            }
        }
        if let Some(first) = channels.first() {
            let n = first.values.len();
            if let Some(bad) = channels.iter().find(|c| c.values.len() != n) {
                return Err(Error::dims(format!(
                    "channel {:?} has length {}, expected {}",
                    bad.name,
                    bad.values.len(),
                    n
                )));
            }
        }
        Ok(Self {
            start,
            cadence,
            channels,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn cadence(&self) -> TimeDelta {
        self.cadence
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + self.cadence * i as i32
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Result<&Channel> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let channels = names
            .iter()
            .map(|n| self.channel(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.start, self.cadence, channels)
    }

    /// Marks every value with a timestamp in `[from, to]` as missing.
    pub fn exclude_range(&self, from: NaiveDateTime, to: NaiveDateTime) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            let ts = self.timestamp(i);
            if ts >= from && ts <= to {
                for c in &mut out.channels {
                    c.values[i] = None;
                }
            }
        }
        out
    }
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a CSV file whose first column is an ISO-8601 timestamp.
///
/// Gaps that are whole multiples of the smallest timestamp step are filled
/// with missing rows, so the returned frame always has a uniform cadence.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &[ChannelDecl]) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty(format!("{} has no header", path.display())));
    }
    let decls: HashMap<&str, &ChannelDecl> = schema.iter().map(|d| (d.name.as_str(), d)).collect();
    let mut columns = Vec::with_capacity(headers.len() - 1);
    for name in headers.iter().skip(1) {
        let decl = decls
            .get(name)
            .ok_or_else(|| Error::UndeclaredChannel(name.to_string()))?;
        columns.push(*decl);
    }
    {
        let mut seen = HashSet::new();
        for d in &columns {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::DuplicateChannel(d.name.clone()));
            }
        }
    }
    for d in schema {
        if !columns.iter().any(|c| c.name == d.name) {
            return Err(Error::MissingChannel(d.name.clone()));
        }
    }

    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let raw = record.get(0).unwrap_or("");
        let ts = parse_timestamp(raw).ok_or_else(|| Error::Timestamp {
            value: raw.to_string(),
            line,
        })?;
        if let Some(&prev) = stamps.last() {
            if ts == prev {
                return Err(Error::DuplicateTimestamp(raw.to_string()));
            }
            if ts < prev {
                return Err(Error::NonMonotoneTimestamps(raw.to_string()));
            }
        }
        stamps.push(ts);
        let values = (1..=columns.len())
            .map(|j| {
                record
                    .get(j)
                    .and_then(|cell| cell.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        rows.push(values);
    }
    if stamps.is_empty() {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }

    let cadence = stamps
        .windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .unwrap_or_else(|| TimeDelta::minutes(10));
    let step_ms = cadence.num_milliseconds();
    let mut slot_of_row = Vec::with_capacity(stamps.len());
    for ts in &stamps {
        let offset = (*ts - stamps[0]).num_milliseconds();
        if step_ms <= 0 || offset % step_ms != 0 {
            return Err(Error::invalid(format!(
                "timestamp {ts} is not on the {}-second grid",
                cadence.num_seconds()
            )));
        }
        slot_of_row.push((offset / step_ms) as usize);
    }
    let len = slot_of_row.last().copied().unwrap_or(0) + 1;
    let channels = columns
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let mut values = vec![None; len];
            for (row, &slot) in rows.iter().zip(&slot_of_row) {
                values[slot] = row[j];
            }
            Channel::new(d.name.clone(), d.role, d.unit.clone(), values)
        })
        .collect();
    TimeSeriesFrame::new(stamps[0], cadence, channels)
}

/// Puts the frame on a finer grid. NWP channels are interpolated piecewise
/// linearly; observed channels keep their values at the original stamps and are
/// missing in between.
pub fn resample_linear(frame: &TimeSeriesFrame, target_cadence: TimeDelta) -> Result<TimeSeriesFrame> {
    let src = frame.cadence().num_milliseconds();
    let dst = target_cadence.num_milliseconds();
    if dst <= 0 || src % dst != 0 {
        return Err(Error::invalid(format!(
            "target cadence {}s does not divide source cadence {}s",
            target_cadence.num_seconds(),
            frame.cadence().num_seconds()
        )));
    }
    let factor = (src / dst) as usize;
    let n = frame.len();
    let len = if n == 0 { 0 } else { (n - 1) * factor + 1 };
    let channels = frame
        .channels()
        .iter()
        .map(|c| {
            let mut values = vec![None; len];
            for i in 0..n {
                values[i * factor] = c.values[i];
                if i + 1 == n || c.role != ChannelRole::Nwp {
                    continue;
                }
                if let (Some(a), Some(b)) = (c.values[i], c.values[i + 1]) {
                    for k in 1..factor {
                        let w = k as f64 / factor as f64;
                        values[i * factor + k] = Some(a + (b - a) * w);
                    }
                }
            }
            Channel::new(c.name.clone(), c.role, c.unit.clone(), values)
        })
        .collect();
    TimeSeriesFrame::new(frame.start(), target_cadence, channels)
}

/// Replaces a direction channel in degrees by its sine and cosine.
pub fn encode_direction(frame: &TimeSeriesFrame, channel: &str) -> Result<TimeSeriesFrame> {
    let pos = frame
        .channels()
        .iter()
        .position(|c| c.name == channel)
        .ok_or_else(|| Error::MissingChannel(channel.to_string()))?;
    let src = &frame.channels()[pos];
    let rad = |v: Option<f64>| v.map(f64::to_radians);
    let sin = Channel::new(
        format!("{channel}_sin"),
        src.role,
        "",
        src.values.iter().map(|&v| rad(v).map(f64::sin)).collect(),
    );
    let cos = Channel::new(
        format!("{channel}_cos"),
        src.role,
        "",
        src.values.iter().map(|&v| rad(v).map(f64::cos)).collect(),
    );
    let mut channels = frame.channels().to_vec();
    channels.splice(pos..=pos, [sin, cos]);
    TimeSeriesFrame::new(frame.start(), frame.cadence(), channels)
}

/// Element-wise mean over turbines. Any missing turbine value makes the
/// averaged sample missing.
pub fn average_turbines(frames: &[TimeSeriesFrame]) -> Result<TimeSeriesFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Empty("no turbine frames".into()))?;
    for f in &frames[1..] {
        if f.start() != first.start() || f.cadence() != first.cadence() || f.len() != first.len() {
            return Err(Error::dims("turbine frames have different timestamps"));
        }
        if f.channel_names() != first.channel_names() {
            return Err(Error::dims("turbine frames have different channels"));
        }
    }
    let count = frames.len() as f64;
    let channels = first
        .channels()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let values = (0..first.len())
                .map(|i| {
                    frames
                        .iter()
                        .map(|f| f.channels()[j].values[i])
                        .sum::<Option<f64>>()
                        .map(|s| s / count)
                })
                .collect();
            Channel::new(c.name.clone(), c.role, c.unit.clone(), values)
        })
        .collect();
    TimeSeriesFrame::new(first.start(), first.cadence(), channels)
}

/// Appends the channels of `other` onto the time grid of `base`; samples of
/// `other` without a matching timestamp become missing.
pub fn join_on_grid(base: &TimeSeriesFrame, other: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    if base.cadence() != other.cadence() {
        return Err(Error::invalid("cannot join frames with different cadences"));
    }
    let step = base.cadence().num_milliseconds();
    let shift = (other.start() - base.start()).num_milliseconds();
    if shift % step != 0 {
        return Err(Error::invalid("frames are not on a common time grid"));
    }
    let shift = shift / step;
    let mut channels = base.channels().to_vec();
    for c in other.channels() {
        let values = (0..base.len() as i64)
            .map(|i| {
                let j = i - shift;
                if j >= 0 && (j as usize) < other.len() {
                    c.values[j as usize]
                } else {
                    None
                }
            })
            .collect();
        channels.push(Channel::new(c.name.clone(), c.role, c.unit.clone(), values));
    }
    TimeSeriesFrame::new(base.start(), base.cadence(), channels)
}
