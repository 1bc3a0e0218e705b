//! Windowed RSS statistics and proximity risk labels.
//!
//! A time-ordered stream of received packets is cut into fixed windows on
//! the absolute time grid `[k * stride, k * stride + window)`. Each window
//! holding enough packets yields one [`FeatureVector`]; the ground-truth
//! distance of the window (its median) decides the risk label.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::moving_average;

/// Binary risk class. `High` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::High => 1,
            Label::Low => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Label::High),
            -1 => Some(Label::Low),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::High => Label::Low,
            Label::Low => Label::High,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "+1" => Ok(Label::High),
            "-1" => Ok(Label::Low),
            other => Err(Error::Format(format!("label must be 1 or -1, got {other:?}"))),
        }
    }
}

/// The five window statistics, in feature-file column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    NSamples,
    MeanRss,
    MaxRss,
    MinRss,
    RssRange,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::NSamples,
        Feature::MeanRss,
        Feature::MaxRss,
        Feature::MinRss,
        Feature::RssRange,
    ];

    /// Order in which features are added in the feature ablation by default.
    pub const ABLATION_ORDER: [Feature; 5] = [
        Feature::MeanRss,
        Feature::NSamples,
        Feature::MaxRss,
        Feature::MinRss,
        Feature::RssRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::NSamples => "n_samples",
            Feature::MeanRss => "mean_rss",
            Feature::MaxRss => "max_rss",
            Feature::MinRss => "min_rss",
            Feature::RssRange => "rss_range",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown feature {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub n_samples: usize,
    pub mean_rss: f64,
    pub max_rss: f64,
    pub min_rss: f64,
    pub rss_range: f64,
    pub label: Option<Label>,
}

impl FeatureVector {
    /// Statistics of a non-empty RSS slice.
    pub fn from_rss(rss: &[f64]) -> Option<Self> {
        if rss.is_empty() {
            return None;
        }
        let max = rss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = rss.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = (rss.iter().sum::<f64>() / rss.len() as f64).clamp(min, max);
        Some(Self {
            n_samples: rss.len(),
            mean_rss: mean,
            max_rss: max,
            min_rss: min,
            rss_range: max - min,
            label: None,
        })
    }

    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::NSamples => self.n_samples as f64,
            Feature::MeanRss => self.mean_rss,
            Feature::MaxRss => self.max_rss,
            Feature::MinRss => self.min_rss,
            Feature::RssRange => self.rss_range,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        Feature::ALL.map(|f| self.get(f))
    }

    pub fn select(&self, features: &[Feature]) -> Vec<f64> {
        features.iter().map(|&f| self.get(f)).collect()
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingPolicy {
    pub window_ms: u64,
    pub stride_ms: u64,
    pub min_samples: usize,
    /// Keep only the first `max_samples` packets of each window.
    pub max_samples: Option<usize>,
    /// Moving-average the RSS stream with this window before windowing.
    pub smoothing: Option<usize>,
}

impl Default for WindowingPolicy {
    fn default() -> Self {
        Self {
            window_ms: 10_000,
            stride_ms: 10_000,
            min_samples: 1,
            max_samples: None,
            smoothing: None,
        }
    }
}

impl WindowingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 {
            return Err(Error::Domain("window_ms must be > 0".into()));
        }
        if self.stride_ms == 0 || self.stride_ms > self.window_ms {
            return Err(Error::Domain(format!(
                "need 0 < stride_ms <= window_ms, got stride {} window {}",
                self.stride_ms, self.window_ms
            )));
        }
        if self.min_samples == 0 {
            return Err(Error::Domain("min_samples must be >= 1".into()));
        }
        if self.max_samples == Some(0) {
            return Err(Error::Domain("max_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskPolicy {
    /// Strictly closer than this counts as close contact.
    pub close_threshold_m: f64,
}

impl Default for RiskPolicy {
    fn default() -> Self {
        Self {
            close_threshold_m: 2.0,
        }
    }
}

impl RiskPolicy {
    pub fn new(close_threshold_m: f64) -> Result<Self> {
        let p = Self { close_threshold_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.close_threshold_m > 0.0 && self.close_threshold_m.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "close_threshold_m must be > 0, got {}",
                self.close_threshold_m
            )))
        }
    }
}

/// A received packet as seen by the feature pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub timestamp_ms: u64,
    pub rss_dbm: f64,
    /// Ground truth, when known.
    pub distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub start_ms: u64,
    pub end_ms: u64,
    pub rss: Vec<f64>,
    pub distances: Vec<f64>,
}

impl ObservationWindow {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::from_rss(&self.rss).expect("windows are never empty")
    }

    /// Median ground-truth distance, if every packet carried one.
    pub fn representative_distance(&self) -> Option<f64> {
        if self.distances.len() != self.rss.len() {
            return None;
        }
        median(&self.distances)
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Cuts a time-ordered observation stream into windows.
pub fn extract_windows(entries: &[Observation], policy: &WindowingPolicy) -> Result<Vec<ObservationWindow>> {
    policy.validate()?;
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    if entries.windows(2).any(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
        return Err(Error::Domain("observations must be time-ordered".into()));
    }

    let rss: Vec<f64> = match policy.smoothing {
        Some(w) => moving_average(&entries.iter().map(|e| e.rss_dbm).collect::<Vec<_>>(), w)?,
        None => entries.iter().map(|e| e.rss_dbm).collect(),
    };
    let ts: Vec<u64> = entries.iter().map(|e| e.timestamp_ms).collect();

    let first = ts[0];
    let last = *ts.last().unwrap();
    let k_first = first.saturating_sub(policy.window_ms - 1).div_ceil(policy.stride_ms);
    let k_last = last / policy.stride_ms;

    let mut out = Vec::new();
    for k in k_first..=k_last {
        let start = k * policy.stride_ms;
        let end = start + policy.window_ms;
        let lo = ts.partition_point(|&t| t < start);
        let mut hi = ts.partition_point(|&t| t < end);
        if let Some(cap) = policy.max_samples {
            hi = hi.min(lo + cap);
        }
        if hi - lo < policy.min_samples {
            continue;
        }
        out.push(ObservationWindow {
            start_ms: start,
            end_ms: end,
            rss: rss[lo..hi].to_vec(),
            distances: entries[lo..hi].iter().filter_map(|e| e.distance_m).collect(),
        });
    }
    Ok(out)
}

pub fn extract_features(entries: &[Observation], policy: &WindowingPolicy) -> Result<Vec<FeatureVector>> {
    Ok(extract_windows(entries, policy)?
        .iter()
        .map(ObservationWindow::features)
        .collect())
}

/// High risk iff the median of `distances` is strictly below the threshold.
/// `None` for an empty window: nothing was heard, so there is no contact.
pub fn label_risk(distances: &[f64], policy: &RiskPolicy) -> Option<Label> {
    median(distances).map(|d| {
        if d < policy.close_threshold_m {
            Label::High
        } else {
            Label::Low
        }
    })
}

/// Windows and labels every stream. Windows lacking ground truth are an error.
pub fn build_labeled(
    streams: &[Vec<Observation>],
    windowing: &WindowingPolicy,
    risk: &RiskPolicy,
) -> Result<Vec<FeatureVector>> {
    risk.validate()?;
    let mut rows = Vec::new();
    for stream in streams {
        for w in extract_windows(stream, windowing)? {
            if w.distances.len() != w.rss.len() {
                return Err(Error::Format(format!(
                    "window at {} ms has observations without ground-truth distance",
                    w.start_ms
                )));
            }
            let label = label_risk(&w.distances, risk).expect("windows are never empty");
            rows.push(w.features().with_label(label));
        }
    }
    Ok(rows)
}

pub const RAW_COLUMNS: [&str; 7] = [
    "distance_m",
    "device_name",
    "mac",
    "payload_hex",
    "rss_dbm",
    "elapsed_ms",
    "timestamp_ms",
];

const REQUIRED_RAW_COLUMNS: [&str; 3] = ["distance_m", "rss_dbm", "timestamp_ms"];

/// One line of a measurement log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub distance_m: f64,
    pub device_name: String,
    pub mac: String,
    pub payload_hex: String,
    pub rss_dbm: f64,
    pub elapsed_ms: f64,
    pub timestamp_ms: u64,
}

impl RawRecord {
    pub fn observation(&self) -> Observation {
        Observation {
            timestamp_ms: self.timestamp_ms,
            rss_dbm: self.rss_dbm,
            distance_m: Some(self.distance_m),
        }
    }
}

/// Maps canonical column names to the names used in a particular file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnMap(BTreeMap<String, String>);

impl ColumnMap {
    /// Parses `canonical=actual` pairs separated by commas.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for pair in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (canon, actual) = pair
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("column mapping {pair:?} is not canonical=actual")))?;
            let canon = canon.trim();
            if !RAW_COLUMNS.contains(&canon) {
                return Err(Error::Format(format!("unknown canonical column {canon:?}")));
            }
            map.insert(canon.to_string(), actual.trim().to_string());
        }
        Ok(Self(map))
    }

    fn actual<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<RawRecord>,
    /// One message per skipped row.
    pub warnings: Vec<String>,
}

pub fn ingest_log_csv(path: &Path, columns: &ColumnMap) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_log_reader(file, columns)
}

pub fn ingest_log_reader<R: Read>(input: R, columns: &ColumnMap) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let position = |canon: &str| headers.iter().position(|h| h == columns.actual(canon));
    for canon in REQUIRED_RAW_COLUMNS {
        if position(canon).is_none() {
            return Err(Error::Format(format!(
                "missing column {:?}",
                columns.actual(canon)
            )));
        }
    }
    let idx: BTreeMap<&str, Option<usize>> = RAW_COLUMNS.iter().map(|&c| (c, position(c))).collect();

    let mut report = IngestReport::default();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.warnings.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let text = |canon: &str| -> &str { idx[canon].and_then(|i| rec.get(i)).unwrap_or("") };
        let parsed = (|| -> std::result::Result<RawRecord, String> {
            let num = |canon: &str| -> std::result::Result<f64, String> {
                let s = text(canon);
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("column {canon}: cannot parse {s:?}"))
            };
            let distance_m = num("distance_m")?;
            if distance_m <= 0.0 {
                return Err(format!("column distance_m: non-positive distance {distance_m}"));
            }
            let timestamp = num("timestamp_ms")?;
            if timestamp < 0.0 {
                return Err(format!("column timestamp_ms: negative timestamp {timestamp}"));
            }
            let elapsed_ms = match text("elapsed_ms") {
                "" => 0.0,
                _ => num("elapsed_ms")?,
            };
            Ok(RawRecord {
                distance_m,
                device_name: text("device_name").to_string(),
                mac: text("mac").to_string(),
                payload_hex: text("payload_hex").to_string(),
                rss_dbm: num("rss_dbm")?,
                elapsed_ms,
                timestamp_ms: timestamp.round() as u64,
            })
        })();
        match parsed {
            Ok(r) => report.records.push(r),
            Err(msg) => report.warnings.push(format!("row {line}: {msg}")),
        }
    }
    Ok(report)
}

/// Splits records into per-link streams keyed by (device_name, mac), each
/// sorted by timestamp.
pub fn group_streams(records: &[RawRecord]) -> Vec<Vec<Observation>> {
    let mut groups: BTreeMap<(&str, &str), Vec<Observation>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.device_name.as_str(), r.mac.as_str()))
            .or_default()
            .push(r.observation());
    }
    groups
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|o| o.timestamp_ms);
            v
        })
        .collect()
}

pub fn write_raw_csv<W: Write>(records: &[RawRecord], meta: &[(String, String)], mut out: W) -> Result<()> {
    write_meta(&mut out, meta)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_COLUMNS)?;
    for r in records {
        w.write_record([
            r.distance_m.to_string(),
            r.device_name.clone(),
            r.mac.clone(),
            r.payload_hex.clone(),
            r.rss_dbm.to_string(),
            r.elapsed_ms.to_string(),
            r.timestamp_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<raw csv>", e))?;
    Ok(())
}

pub const FEATURE_COLUMNS: [&str; 6] = ["n_samples", "mean_rss", "max_rss", "min_rss", "rss_range", "label"];

/// `# key=value` lines ahead of a CSV header.
pub fn write_meta<W: Write>(out: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_feature_csv<W: Write>(rows: &[FeatureVector], meta: &[(String, String)], mut out: W) -> Result<()> {
    write_meta(&mut out, meta)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FEATURE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.n_samples.to_string(),
            r.mean_rss.to_string(),
            r.max_rss.to_string(),
            r.min_rss.to_string(),
            r.rss_range.to_string(),
            r.label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in FEATURE_COLUMNS.iter().enumerate() {
        idx[slot] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))?;
    }
    let mut rows = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let num = |slot: usize| -> Result<f64> {
            let s = &rec[idx[slot]];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("row {line}: column {}: cannot parse {s:?}", FEATURE_COLUMNS[slot])))
        };
        let n = num(0)?;
        if n < 1.0 || n.fract() != 0.0 {
            return Err(Error::Format(format!("row {line}: n_samples must be a positive integer, got {n}")));
        }
        let label = match &rec[idx[5]] {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|e| Error::Format(format!("row {line}: {e}")))?),
        };
        rows.push(FeatureVector {
            n_samples: n as usize,
            mean_rss: num(1)?,
            max_rss: num(2)?,
            min_rss: num(3)?,
            rss_range: num(4)?,
            label,
        });
    }
    Ok(rows)
}
