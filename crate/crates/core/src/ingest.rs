//! Raw wearable records and their aggregation onto the measurement grid.
//!
//! A raw file has one row per device reading:
//!
//! ```text
//! fan_id,timestamp,heart_rate,stress,steps,calories,motion_intensity
//! ```
//!
//! Readings are assigned to equidistant bins by clock time relative to the
//! kickoff of each half. Heart rate, stress and motion are averaged within a
//! bin; steps and calories are summed. Trailing bins that extend past the end
//! of play average whatever readings they contain.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::imputation::{filter_fans_with_summary, FilterSummary};
use crate::model::TimeGrid;

pub const RAW_COLUMNS: [&str; 7] = [
    "fan_id",
    "timestamp",
    "heart_rate",
    "stress",
    "steps",
    "calories",
    "motion_intensity",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub fan_id: String,
    pub timestamp: NaiveDateTime,
    pub heart_rate: Option<f64>,
    pub stress: Option<f64>,
    pub steps: Option<f64>,
    pub calories: Option<f64>,
    pub motion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRecordFile {
    pub records: Vec<RawRecord>,
}

/// Parses `YYYY-MM-DD HH:MM:SS`, the `T`-separated form (both with optional
/// fractional seconds) or RFC 3339. Offsets are converted to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

fn parse_optional(field: &str, name: &str, errors: &mut Vec<String>, row: usize) -> Option<f64> {
    let field = field.trim();
    if field.is_empty() {
        return None;
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            errors.push(format!("row {row}: {name} `{field}` is not a number"));
            None
        }
    }
}

impl RawRecordFile {
    /// Reads a raw CSV with a header row. Column order is free; every
    /// unparseable row is reported, numbered from 1 after the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let header = rd.headers()?.clone();
        let mut idx = [0usize; 7];
        for (k, name) in RAW_COLUMNS.iter().enumerate() {
            idx[k] = header
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Data(format!("raw CSV is missing column `{name}`")))?;
        }
        let mut records = Vec::new();
        let mut errors = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    errors.push(format!("row {row}: {e}"));
                    continue;
                }
            };
            if rec.len() < header.len() {
                errors.push(format!("row {row}: {} fields, expected {}", rec.len(), header.len()));
                continue;
            }
            let before = errors.len();
            let fan_id = rec[idx[0]].trim().to_string();
            if fan_id.is_empty() {
                errors.push(format!("row {row}: empty fan_id"));
            }
            let timestamp = parse_timestamp(&rec[idx[1]]);
            if timestamp.is_none() {
                errors.push(format!("row {row}: timestamp `{}` does not parse", &rec[idx[1]]));
            }
            let heart_rate = parse_optional(&rec[idx[2]], "heart_rate", &mut errors, row);
            if matches!(heart_rate, Some(v) if v <= 0.0) {
                errors.push(format!("row {row}: heart_rate must be positive"));
            }
            let stress = parse_optional(&rec[idx[3]], "stress", &mut errors, row);
            let steps = parse_optional(&rec[idx[4]], "steps", &mut errors, row);
            let calories = parse_optional(&rec[idx[5]], "calories", &mut errors, row);
            let motion = parse_optional(&rec[idx[6]], "motion_intensity", &mut errors, row);
            if errors.len() == before {
                records.push(RawRecord {
                    fan_id,
                    timestamp: timestamp.expect("checked above"),
                    heart_rate,
                    stress,
                    steps,
                    calories,
                    motion,
                });
            }
        }
        if let Some(first) = errors.first() {
            return Err(Error::Parse {
                count: errors.len(),
                first: first.clone(),
            });
        }
        Ok(Self { records })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(RAW_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            wr.write_record([
                r.fan_id.clone(),
                r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
                opt(r.heart_rate),
                opt(r.stress),
                opt(r.steps),
                opt(r.calories),
                opt(r.motion),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// One reading per fan and bin, stamped at the bin midpoint. Ingesting
    /// the result with the same clock reproduces `panel`.
    pub fn from_panel(panel: &PanelDataset, clock: &MatchClock, grid: &TimeGrid) -> Result<Self> {
        panel.validate()?;
        if panel.n_points != grid.n_points {
            return Err(Error::Dimension(format!(
                "panel has {} time points, grid has {}",
                panel.n_points, grid.n_points
            )));
        }
        let anchors = clock.anchors(grid)?;
        let interval = Duration::seconds(60 * grid.interval_minutes as i64);
        let mut records = Vec::with_capacity(panel.n_fans() * grid.n_points);
        for i in 0..panel.n_fans() {
            for t in 1..=grid.n_points {
                let start = anchors.bin_start(grid, t, interval);
                let j = t - 1;
                records.push(RawRecord {
                    fan_id: panel.fan_ids[i].clone(),
                    timestamp: start + interval / 2,
                    heart_rate: Some(panel.hr[i][j]),
                    stress: panel.sl[i][j],
                    steps: Some(panel.steps[i][j]),
                    calories: Some(panel.calories[i][j]),
                    motion: Some(panel.motion[i][j]),
                });
            }
        }
        Ok(Self { records })
    }
}

/// Clock anchors of a match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchClock {
    pub kickoff: Option<String>,
    /// Start of the second half; defaults to the end of the first-half bins
    /// plus `halftime_gap_minutes`.
    pub second_half_kickoff: Option<String>,
    pub halftime_gap_minutes: i64,
}

impl Default for MatchClock {
    fn default() -> Self {
        Self {
            kickoff: None,
            second_half_kickoff: None,
            halftime_gap_minutes: 15,
        }
    }
}

impl MatchClock {
    pub fn with_kickoff(kickoff: &str) -> Self {
        Self {
            kickoff: Some(kickoff.to_string()),
            ..Self::default()
        }
    }

    fn anchors(&self, grid: &TimeGrid) -> Result<Anchors> {
        let kickoff = self
            .kickoff
            .as_deref()
            .ok_or_else(|| Error::Config("match clock has no kickoff timestamp".into()))?;
        let first = parse_timestamp(kickoff).ok_or_else(|| Error::Config(format!("kickoff `{kickoff}` does not parse")))?;
        let first_half_len = Duration::minutes(((grid.halftime_start - 1) as i64) * grid.interval_minutes as i64);
        let second = match &self.second_half_kickoff {
            Some(s) => parse_timestamp(s).ok_or_else(|| Error::Config(format!("second-half kickoff `{s}` does not parse")))?,
            None => {
                if self.halftime_gap_minutes < 0 {
                    return Err(Error::Config("halftime gap must be non-negative".into()));
                }
                first + first_half_len + Duration::minutes(self.halftime_gap_minutes)
            }
        };
        if second < first + first_half_len {
            return Err(Error::Config("second half starts before the first-half bins end".into()));
        }
        Ok(Anchors { first, second })
    }
}

struct Anchors {
    first: NaiveDateTime,
    second: NaiveDateTime,
}

impl Anchors {
    fn bin_start(&self, grid: &TimeGrid, t: usize, interval: Duration) -> NaiveDateTime {
        if grid.is_second_half(t) {
            self.second + interval * (t - grid.halftime_start) as i32
        } else {
            self.first + interval * (t - 1) as i32
        }
    }

    /// 1-based bin of a timestamp, or `None` outside both halves.
    fn bin_of(&self, grid: &TimeGrid, ts: NaiveDateTime, interval: Duration) -> Option<usize> {
        let width = interval.num_milliseconds();
        let locate = |anchor: NaiveDateTime, n_bins: usize| -> Option<usize> {
            let ms = (ts - anchor).num_milliseconds();
            if ms < 0 {
                return None;
            }
            let k = (ms / width) as usize;
            (k < n_bins).then_some(k)
        };
        let first_bins = grid.halftime_start - 1;
        let second_bins = grid.n_points - first_bins;
        locate(self.first, first_bins)
            .map(|k| k + 1)
            .or_else(|| locate(self.second, second_bins).map(|k| k + grid.halftime_start))
    }
}

/// Counts reported by [`ingest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub fans_seen: usize,
    /// Readings outside both halves.
    pub outside_window: usize,
    /// Fans with at least one bin without a heart-rate reading.
    pub incomplete_heart_rate: usize,
    /// Binned stress values outside the device scale `[0, 100]`.
    pub stress_out_of_range: usize,
    pub filter: FilterSummary,
}

#[derive(Debug, Default, Clone)]
struct BinAccumulator {
    hr_sum: f64,
    hr_n: usize,
    sl_sum: f64,
    sl_n: usize,
    steps: f64,
    calories: f64,
    motion_sum: f64,
    motion_n: usize,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Bins raw records onto `grid`, drops fans with incomplete heart rate and
/// applies the sparse-stress filter.
pub fn ingest(raw: &RawRecordFile, clock: &MatchClock, grid: &TimeGrid) -> Result<(PanelDataset, IngestSummary)> {
    grid.validate()?;
    let anchors = clock.anchors(grid)?;
    let interval = Duration::seconds(60 * grid.interval_minutes as i64);
    let t_max = grid.n_points;

    let mut order: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut bins: Vec<Vec<BinAccumulator>> = Vec::new();
    let mut outside = 0;
    for r in &raw.records {
        let fan = *index.entry(r.fan_id.clone()).or_insert_with(|| {
            order.push(r.fan_id.clone());
            bins.push(vec![BinAccumulator::default(); t_max]);
            order.len() - 1
        });
        let Some(t) = anchors.bin_of(grid, r.timestamp, interval) else {
            outside += 1;
            continue;
        };
        let b = &mut bins[fan][t - 1];
        if let Some(v) = r.heart_rate {
            b.hr_sum += v;
            b.hr_n += 1;
        }
        if let Some(v) = r.stress {
            b.sl_sum += v;
            b.sl_n += 1;
        }
        b.steps += r.steps.unwrap_or(0.0);
        b.calories += r.calories.unwrap_or(0.0);
        if let Some(v) = r.motion {
            b.motion_sum += v;
            b.motion_n += 1;
        }
    }

    let mut panel = PanelDataset::empty(t_max);
    let mut incomplete = 0;
    let mut out_of_range = 0;
    for (id, fan_bins) in order.iter().zip(&bins) {
        let hr: Option<Vec<f64>> = fan_bins.iter().map(|b| mean(b.hr_sum, b.hr_n)).collect();
        let Some(hr) = hr else {
            incomplete += 1;
            continue;
        };
        let sl: Vec<Option<f64>> = fan_bins.iter().map(|b| mean(b.sl_sum, b.sl_n)).collect();
        out_of_range += sl.iter().flatten().filter(|v| !(0.0..=100.0).contains(*v)).count();
        panel.fan_ids.push(id.clone());
        panel.hr.push(hr);
        panel.sl.push(sl);
        panel.steps.push(fan_bins.iter().map(|b| b.steps).collect());
        panel.calories.push(fan_bins.iter().map(|b| b.calories).collect());
        panel
            .motion
            .push(fan_bins.iter().map(|b| mean(b.motion_sum, b.motion_n).unwrap_or(0.0)).collect());
    }
    if panel.n_fans() == 0 {
        return Err(Error::Data("no fan has a heart-rate reading in every bin".into()));
    }
    let (panel, filter) = filter_fans_with_summary(&panel)?;
    let summary = IngestSummary {
        records: raw.records.len(),
        fans_seen: order.len(),
        outside_window: outside,
        incomplete_heart_rate: incomplete,
        stress_out_of_range: out_of_range,
        filter,
    };
    Ok((panel, summary))
}
