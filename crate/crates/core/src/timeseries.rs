//! Time-indexed data model for half-hourly load and weather series.
//!
//! The canonical resolution is a strict 30-minute UTC grid. Gaps inside the
//! covered range are kept as explicit rows with NaN values rather than being
//! silently skipped, so downstream feature construction can mask them out.

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// Seconds in one half-hour slot.
pub const SLOT_SECONDS: i64 = 30 * 60;
/// Half-hour slots per day.
pub const SLOTS_PER_DAY: usize = 48;
/// Half-hour slots per week.
pub const SLOTS_PER_WEEK: usize = 7 * SLOTS_PER_DAY;
/// Hours in one meteorological year of 365.24 days.
pub const HOURS_PER_YEAR: f64 = 365.24 * 24.0;

/// The six weather channels, in canonical order.
pub const WEATHER_CHANNELS: [&str; 6] = ["temp", "solar", "windN", "windE", "press", "humid"];

#[derive(Debug, Error)]
pub enum TimeSeriesError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("bad schema: missing column `{0}`")]
    BadSchema(String),
    #[error("non-monotonic timestamps: `{0}` is not aligned to the 30-minute grid")]
    NonMonotonicTimestamps(String),
    #[error("no weather stations supplied")]
    NoStations,
    #[error("weather channel `{0}` missing from station input")]
    ChannelMissing(String),
    #[error("load constraint violated at {0}: load_min <= load <= load_max does not hold")]
    LoadBoundsViolated(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Column mapping for load CSV ingestion. Field values are header names.
#[derive(Debug, Clone)]
pub struct LoadSchema {
    pub timestamp: String,
    pub load: String,
    pub load_min: Option<String>,
    pub load_max: Option<String>,
}

impl Default for LoadSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load_mw".into(),
            load_min: Some("load_min_mw".into()),
            load_max: Some("load_max_mw".into()),
        }
    }
}

/// Counters reported by ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub duplicates: usize,
    pub unparseable: usize,
    pub gaps_filled: usize,
}

/// Aligned half-hourly records of load, optional high-resolution extremes and
/// station-averaged weather. Missing values are NaN; the timestamp grid is
/// contiguous with a constant 30-minute step.
#[derive(Debug, Clone)]
pub struct TimeSeriesFrame {
    timestamps: Vec<DateTime<Utc>>,
    load: Vec<f64>,
    load_min: Vec<f64>,
    load_max: Vec<f64>,
    /// Channel-major weather values: `weather[c][t]`, NaN where absent.
    weather: [Vec<f64>; 6],
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

// Bitwise equality so NaN gaps compare equal to themselves.
impl PartialEq for TimeSeriesFrame {
    fn eq(&self, other: &Self) -> bool {
        self.timestamps == other.timestamps
            && bits_eq(&self.load, &other.load)
            && bits_eq(&self.load_min, &other.load_min)
            && bits_eq(&self.load_max, &other.load_max)
            && (0..6).all(|c| bits_eq(&self.weather[c], &other.weather[c]))
    }
}

impl TimeSeriesFrame {
    /// Builds a frame from parallel vectors. Timestamps must be strictly
    /// increasing on the 30-minute grid with no holes.
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        load: Vec<f64>,
        load_min: Vec<f64>,
        load_max: Vec<f64>,
    ) -> Result<Self, TimeSeriesError> {
        if timestamps.is_empty() {
            return Err(TimeSeriesError::EmptyInput("no rows".into()));
        }
        assert_eq!(timestamps.len(), load.len());
        assert_eq!(timestamps.len(), load_min.len());
        assert_eq!(timestamps.len(), load_max.len());
        for w in timestamps.windows(2) {
            if w[1] - w[0] != Duration::seconds(SLOT_SECONDS) {
                return Err(TimeSeriesError::NonMonotonicTimestamps(w[1].to_rfc3339()));
            }
        }
        for (i, ts) in timestamps.iter().enumerate() {
            let (lo, l, hi) = (load_min[i], load[i], load_max[i]);
            if lo.is_finite() && l.is_finite() && hi.is_finite() && !(lo <= l && l <= hi) {
                return Err(TimeSeriesError::LoadBoundsViolated(ts.to_rfc3339()));
            }
        }
        let n = timestamps.len();
        Ok(Self {
            timestamps,
            load,
            load_min,
            load_max,
            weather: std::array::from_fn(|_| vec![f64::NAN; n]),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn load_min(&self) -> &[f64] {
        &self.load_min
    }

    pub fn load_max(&self) -> &[f64] {
        &self.load_max
    }

    /// Weather channel by canonical index (see [`WEATHER_CHANNELS`]).
    pub fn weather(&self, channel: usize) -> &[f64] {
        &self.weather[channel]
    }

    pub fn set_weather(&mut self, channels: [Vec<f64>; 6]) {
        for c in &channels {
            assert_eq!(c.len(), self.len());
        }
        self.weather = channels;
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.timestamps[0]
    }

    /// Index of a timestamp on the grid, if covered.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let delta = (ts - self.timestamps[0]).num_seconds();
        if delta < 0 || delta % SLOT_SECONDS != 0 {
            return None;
        }
        let idx = (delta / SLOT_SECONDS) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Restriction to the half-open index range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeriesFrame {
        assert!(start < end && end <= self.len());
        TimeSeriesFrame {
            timestamps: self.timestamps[start..end].to_vec(),
            load: self.load[start..end].to_vec(),
            load_min: self.load_min[start..end].to_vec(),
            load_max: self.load_max[start..end].to_vec(),
            weather: std::array::from_fn(|c| self.weather[c][start..end].to_vec()),
        }
    }

    /// Writes the frame as the canonical load CSV, weather columns included
    /// when any are present. `header_comments` lines are emitted first with a
    /// `# ` prefix.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        header_comments: &[String],
    ) -> std::io::Result<()> {
        for line in header_comments {
            writeln!(out, "# {line}")?;
        }
        let has_weather = self.weather.iter().any(|c| c.iter().any(|v| v.is_finite()));
        let mut header = String::from("timestamp,load_mw,load_min_mw,load_max_mw");
        if has_weather {
            for name in WEATHER_CHANNELS {
                header.push(',');
                header.push_str(name);
            }
        }
        writeln!(out, "{header}")?;
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for i in 0..self.len() {
            let mut line = format!(
                "{},{},{},{}",
                self.timestamps[i].format("%Y-%m-%dT%H:%M:%SZ"),
                fmt(self.load[i]),
                fmt(self.load_min[i]),
                fmt(self.load_max[i]),
            );
            if has_weather {
                for c in 0..6 {
                    line.push(',');
                    line.push_str(&fmt(self.weather[c][i]));
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|dt| dt.with_timezone(&Utc))
}

fn parse_field(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite() || v.is_nan())
}

fn grid_aligned(ts: DateTime<Utc>, origin: DateTime<Utc>) -> bool {
    (ts - origin).num_seconds().rem_euclid(SLOT_SECONDS) == 0
}

/// Reads a load CSV into a [`TimeSeriesFrame`].
///
/// Rows are sorted, deduplicated on timestamp (last occurrence wins) and the
/// 30-minute grid is validated; interior gaps become explicit NaN rows. Rows
/// with unparseable values are dropped and counted.
pub fn ingest_load(
    path: &Path,
    schema: &LoadSchema,
) -> Result<(TimeSeriesFrame, IngestReport), TimeSeriesError> {
    let file = std::fs::File::open(path).map_err(|source| TimeSeriesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_load_reader(file, schema, &path.display().to_string())
}

/// Same as [`ingest_load`] but from any reader; `name` is used in errors.
pub fn ingest_load_reader<R: Read>(
    reader: R,
    schema: &LoadSchema,
    name: &str,
) -> Result<(TimeSeriesFrame, IngestReport), TimeSeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| TimeSeriesError::Csv { path: name.into(), source })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ts_col = col(&schema.timestamp)
        .ok_or_else(|| TimeSeriesError::BadSchema(schema.timestamp.clone()))?;
    let load_col = col(&schema.load).ok_or_else(|| TimeSeriesError::BadSchema(schema.load.clone()))?;
    let min_col = schema.load_min.as_deref().and_then(col);
    let max_col = schema.load_max.as_deref().and_then(col);

    let mut report = IngestReport::default();
    let mut rows: BTreeMap<DateTime<Utc>, (f64, f64, f64)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|source| TimeSeriesError::Csv { path: name.into(), source })?;
        report.rows_read += 1;
        let Some(ts) = record.get(ts_col).and_then(parse_timestamp) else {
            report.unparseable += 1;
            continue;
        };
        let Some(load) = record.get(load_col).and_then(parse_field) else {
            report.unparseable += 1;
            continue;
        };
        let get_opt = |c: Option<usize>| -> Option<f64> {
            match c {
                Some(c) => record.get(c).and_then(parse_field),
                None => Some(f64::NAN),
            }
        };
        let (Some(lo), Some(hi)) = (get_opt(min_col), get_opt(max_col)) else {
            report.unparseable += 1;
            continue;
        };
        if rows.insert(ts, (load, lo, hi)).is_some() {
            report.duplicates += 1;
        }
    }
    if rows.is_empty() {
        return Err(TimeSeriesError::EmptyInput(name.into()));
    }

    let origin = *rows.keys().next().unwrap();
    for ts in rows.keys() {
        if !grid_aligned(*ts, origin) {
            return Err(TimeSeriesError::NonMonotonicTimestamps(ts.to_rfc3339()));
        }
    }
    let last = *rows.keys().next_back().unwrap();
    let n = ((last - origin).num_seconds() / SLOT_SECONDS) as usize + 1;
    let mut timestamps = Vec::with_capacity(n);
    let mut load = vec![f64::NAN; n];
    let mut load_min = vec![f64::NAN; n];
    let mut load_max = vec![f64::NAN; n];
    for i in 0..n {
        timestamps.push(origin + Duration::seconds(SLOT_SECONDS * i as i64));
    }
    for (ts, (l, lo, hi)) in &rows {
        let idx = ((*ts - origin).num_seconds() / SLOT_SECONDS) as usize;
        load[idx] = *l;
        load_min[idx] = *lo;
        load_max[idx] = *hi;
    }
    report.rows_kept = rows.len();
    report.gaps_filled = n - rows.len();
    let frame = TimeSeriesFrame::new(timestamps, load, load_min, load_max)?;
    Ok((frame, report))
}

/// Raw per-station weather series on an hourly or half-hourly grid.
#[derive(Debug, Clone)]
pub struct WeatherStation {
    pub timestamps: Vec<DateTime<Utc>>,
    /// Channel-major values in [`WEATHER_CHANNELS`] order.
    pub channels: [Vec<f64>; 6],
}

/// Reads a per-station weather CSV (`timestamp,temp,solar,windN,windE,press,humid`).
pub fn ingest_weather(path: &Path) -> Result<WeatherStation, TimeSeriesError> {
    let file = std::fs::File::open(path).map_err(|source| TimeSeriesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_weather_reader(file, &path.display().to_string())
}

pub fn ingest_weather_reader<R: Read>(
    reader: R,
    name: &str,
) -> Result<WeatherStation, TimeSeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|source| TimeSeriesError::Csv { path: name.into(), source })?
        .clone();
    let ts_col = headers
        .iter()
        .position(|h| h.trim() == "timestamp")
        .ok_or_else(|| TimeSeriesError::BadSchema("timestamp".into()))?;
    let mut chan_cols = [0usize; 6];
    for (c, chan) in WEATHER_CHANNELS.iter().enumerate() {
        chan_cols[c] = headers
            .iter()
            .position(|h| h.trim() == *chan)
            .ok_or_else(|| TimeSeriesError::ChannelMissing(chan.to_string()))?;
    }
    let mut rows: BTreeMap<DateTime<Utc>, [f64; 6]> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|source| TimeSeriesError::Csv { path: name.into(), source })?;
        let Some(ts) = record.get(ts_col).and_then(parse_timestamp) else {
            continue;
        };
        let mut vals = [f64::NAN; 6];
        for c in 0..6 {
            vals[c] = record.get(chan_cols[c]).and_then(parse_field).unwrap_or(f64::NAN);
        }
        rows.insert(ts, vals);
    }
    if rows.is_empty() {
        return Err(TimeSeriesError::EmptyInput(name.into()));
    }
    let timestamps: Vec<_> = rows.keys().copied().collect();
    let channels = std::array::from_fn(|c| rows.values().map(|v| v[c]).collect());
    Ok(WeatherStation { timestamps, channels })
}

/// Linear interpolation of one station channel onto the half-hour grid.
/// Points outside the station's observed span stay NaN.
fn interpolate_channel(
    station_ts: &[DateTime<Utc>],
    values: &[f64],
    grid: &[DateTime<Utc>],
) -> Vec<f64> {
    let mut out = vec![f64::NAN; grid.len()];
    if station_ts.is_empty() {
        return out;
    }
    let mut j = 0usize;
    for (i, ts) in grid.iter().enumerate() {
        while j + 1 < station_ts.len() && station_ts[j + 1] <= *ts {
            j += 1;
        }
        if station_ts[j] == *ts {
            out[i] = values[j];
        } else if station_ts[j] < *ts && j + 1 < station_ts.len() {
            let (t0, t1) = (station_ts[j], station_ts[j + 1]);
            let (v0, v1) = (values[j], values[j + 1]);
            if v0.is_finite() && v1.is_finite() {
                let w = (*ts - t0).num_seconds() as f64 / (t1 - t0).num_seconds() as f64;
                out[i] = v0 + w * (v1 - v0);
            }
        }
    }
    out
}

/// Per-instant arithmetic mean over stations that observe the instant.
/// Hourly stations are linearly interpolated to the half-hour grid first.
pub fn average_weather(
    stations: &[WeatherStation],
    grid: &[DateTime<Utc>],
) -> Result<[Vec<f64>; 6], TimeSeriesError> {
    if stations.is_empty() {
        return Err(TimeSeriesError::NoStations);
    }
    let mut out: [Vec<f64>; 6] = std::array::from_fn(|_| vec![f64::NAN; grid.len()]);
    for c in 0..6 {
        let per_station: Vec<Vec<f64>> = stations
            .iter()
            .map(|s| interpolate_channel(&s.timestamps, &s.channels[c], grid))
            .collect();
        for i in 0..grid.len() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for vals in &per_station {
                if vals[i].is_finite() {
                    sum += vals[i];
                    count += 1;
                }
            }
            if count > 0 {
                out[c][i] = sum / count as f64;
            }
        }
    }
    Ok(out)
}

/// Deterministic seasonal clocks per instant: hours into the day, week and
/// meteorological year.
#[derive(Debug, Clone, PartialEq)]
pub struct CalendarInputs {
    /// Hours into the day, in `[0, 24)`.
    pub day_hours: Vec<f64>,
    /// Hours into the week, Monday 00:00 = 0, in `[0, 168)`.
    pub week_hours: Vec<f64>,
    /// Hours into the meteorological year of 365.24 days anchored at
    /// 2020-01-01T00:00Z, in `[0, 8765.76)`.
    pub year_hours: Vec<f64>,
}

/// Anchor of the meteorological year clock.
pub fn year_anchor() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

/// Computes the three calendar inputs for each timestamp, in UTC without any
/// daylight-saving adjustment.
pub fn calendar_inputs(timestamps: &[DateTime<Utc>]) -> CalendarInputs {
    let anchor = year_anchor();
    let mut day_hours = Vec::with_capacity(timestamps.len());
    let mut week_hours = Vec::with_capacity(timestamps.len());
    let mut year_hours = Vec::with_capacity(timestamps.len());
    for ts in timestamps {
        let d = ts.hour() as f64 + ts.minute() as f64 / 60.0 + ts.second() as f64 / 3600.0;
        let w = ts.weekday().num_days_from_monday() as f64 * 24.0 + d;
        let since_anchor = (*ts - anchor).num_seconds() as f64 / 3600.0;
        let a = since_anchor.rem_euclid(HOURS_PER_YEAR);
        day_hours.push(d);
        week_hours.push(w);
        year_hours.push(a);
    }
    CalendarInputs { day_hours, week_hours, year_hours }
}
