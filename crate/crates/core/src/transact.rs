//! Sensor readings to categorical transactions.
//!
//! Readings are aggregated into fixed time windows, numeric sensors are
//! discretized into equal-frequency intervals, graph properties are appended
//! as extra features when enrichment is on, and the result is one-hot encoded
//! for the autoencoder.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, Binding, EnrichOptions, GraphError, PropValue, PropertyGraph};

#[derive(Debug, Error)]
pub enum TransactError {
    #[error("sensor series is empty")]
    EmptySeries,
    #[error("window must be positive, got {0}")]
    InvalidWindow(i64),
    #[error("interval count must be at least 1")]
    InvalidIntervals,
    #[error("duplicate reading for sensor `{sensor}` at {timestamp}")]
    DuplicateReading { sensor: String, timestamp: i64 },
    #[error("sensor `{0}` mixes numeric and categorical readings")]
    MixedKinds(String),
    #[error("non-finite numeric value")]
    NonFinite,
    #[error("feature `{feature}` has no class `{value}`")]
    UnknownClass { feature: String, value: String },
    #[error("malformed table: {0}")]
    Shape(String),
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A single sensor reading.
#[derive(Debug, Clone, PartialEq)]
pub enum Reading {
    Num(f64),
    Cat(String),
}

impl Reading {
    fn is_numeric(&self) -> bool {
        matches!(self, Reading::Num(_))
    }
}

/// Readings keyed by sensor and timestamp (epoch seconds).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorSeries {
    readings: BTreeMap<String, BTreeMap<i64, Reading>>,
}

impl SensorSeries {
    pub fn from_readings<I, S>(readings: I) -> Result<Self, TransactError>
    where
        I: IntoIterator<Item = (S, i64, Reading)>,
        S: Into<String>,
    {
        let mut out: BTreeMap<String, BTreeMap<i64, Reading>> = BTreeMap::new();
        for (sensor, ts, value) in readings {
            let sensor = sensor.into();
            if let Reading::Num(x) = value {
                if !x.is_finite() {
                    return Err(TransactError::NonFinite);
                }
            }
            let per = out.entry(sensor.clone()).or_default();
            if let Some(first) = per.values().next() {
                if first.is_numeric() != value.is_numeric() {
                    return Err(TransactError::MixedKinds(sensor));
                }
            }
            if per.insert(ts, value).is_some() {
                return Err(TransactError::DuplicateReading {
                    sensor,
                    timestamp: ts,
                });
            }
        }
        Ok(Self { readings: out })
    }

    pub fn is_empty(&self) -> bool {
        self.readings.values().all(BTreeMap::is_empty)
    }

    pub fn sensors(&self) -> impl Iterator<Item = &str> {
        self.readings.keys().map(String::as_str)
    }

    pub fn is_numeric(&self, sensor: &str) -> bool {
        self.readings
            .get(sensor)
            .and_then(|r| r.values().next())
            .is_some_and(Reading::is_numeric)
    }

    pub fn get(&self, sensor: &str, timestamp: i64) -> Option<&Reading> {
        self.readings.get(sensor)?.get(&timestamp)
    }

    pub fn readings_of(&self, sensor: &str) -> Option<&BTreeMap<i64, Reading>> {
        self.readings.get(sensor)
    }

    /// Timestamps at which every sensor has a reading.
    pub fn complete_timestamps(&self) -> Vec<i64> {
        let mut iter = self.readings.values();
        let Some(first) = iter.next() else {
            return Vec::new();
        };
        let rest: Vec<_> = iter.collect();
        first
            .keys()
            .copied()
            .filter(|t| rest.iter().all(|r| r.contains_key(t)))
            .collect()
    }

    /// Keeps only the listed sensors.
    pub fn restrict<'a>(&self, sensors: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: BTreeSet<&str> = sensors.into_iter().collect();
        Self {
            readings: self
                .readings
                .iter()
                .filter(|(s, _)| keep.contains(s.as_str()))
                .map(|(s, r)| (s.clone(), r.clone()))
                .collect(),
        }
    }
}

/// Groups readings into windows of `window` seconds. Numeric sensors are
/// averaged, categorical sensors take the modal value (lexicographically
/// smallest on ties). Only windows in which every sensor reported survive;
/// each is stamped with its start time.
pub fn aggregate(series: &SensorSeries, window: i64) -> Result<SensorSeries, TransactError> {
    if window <= 0 {
        return Err(TransactError::InvalidWindow(window));
    }
    if series.is_empty() {
        return Err(TransactError::EmptySeries);
    }

    let mut out = BTreeMap::new();
    for (sensor, readings) in &series.readings {
        let mut buckets: BTreeMap<i64, Vec<&Reading>> = BTreeMap::new();
        for (ts, r) in readings {
            buckets.entry(ts.div_euclid(window)).or_default().push(r);
        }
        let per: BTreeMap<i64, Reading> = buckets
            .into_iter()
            .map(|(w, rs)| (w * window, summarize(&rs)))
            .collect();
        out.insert(sensor.clone(), per);
    }

    let mut agg = SensorSeries { readings: out };
    let keep: BTreeSet<i64> = agg.complete_timestamps().into_iter().collect();
    for per in agg.readings.values_mut() {
        per.retain(|t, _| keep.contains(t));
    }
    Ok(agg)
}

fn summarize(rs: &[&Reading]) -> Reading {
    if rs[0].is_numeric() {
        let sum: f64 = rs
            .iter()
            .map(|r| match r {
                Reading::Num(x) => *x,
                Reading::Cat(_) => unreachable!("sensor kinds are homogeneous"),
            })
            .sum();
        Reading::Num(sum / rs.len() as f64)
    } else {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in rs {
            if let Reading::Cat(s) = r {
                *counts.entry(s.as_str()).or_default() += 1;
            }
        }
        // BTreeMap iterates in key order, so the first maximum is the
        // lexicographically smallest mode.
        let mut best = ("", 0usize);
        for (k, c) in counts {
            if c > best.1 {
                best = (k, c);
            }
        }
        Reading::Cat(best.0.to_string())
    }
}

/// Result of equal-frequency binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    /// Inclusive upper boundaries of every bin but the last, strictly increasing.
    pub edges: Vec<f64>,
    /// `lo-hi` label per bin using the observed extremes.
    pub labels: Vec<String>,
    /// Bin index for each input value, in input order.
    pub assignment: Vec<usize>,
}

impl Discretization {
    pub fn class_of(&self, value: f64) -> usize {
        bin_index(&self.edges, value)
    }
}

fn bin_index(edges: &[f64], value: f64) -> usize {
    edges.partition_point(|&e| e < value)
}

fn format_bound(x: f64) -> String {
    format!("{x}")
}

/// Equal-frequency binning. With `n` sorted values the `k`-th edge is the
/// value at 1-based position `ceil(k*n/intervals)`; values equal to an edge
/// fall in the lower bin. Duplicate edges merge, so heavily tied or constant
/// data produces fewer bins.
pub fn discretize_equal_frequency(
    values: &[f64],
    intervals: usize,
) -> Result<Discretization, TransactError> {
    if intervals == 0 {
        return Err(TransactError::InvalidIntervals);
    }
    if values.is_empty() {
        return Err(TransactError::EmptySeries);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TransactError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let max = sorted[n - 1];

    let mut edges: Vec<f64> = Vec::with_capacity(intervals.saturating_sub(1));
    for k in 1..intervals {
        let pos = (k * n).div_ceil(intervals);
        let e = sorted[pos.max(1) - 1];
        if e < max && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }

    let bins = edges.len() + 1;
    let mut lo = vec![f64::INFINITY; bins];
    let mut hi = vec![f64::NEG_INFINITY; bins];
    let assignment: Vec<usize> = values
        .iter()
        .map(|&v| {
            let b = bin_index(&edges, v);
            lo[b] = lo[b].min(v);
            hi[b] = hi[b].max(v);
            b
        })
        .collect();
    let labels = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| format!("{}-{}", format_bound(*l), format_bound(*h)))
        .collect();
    Ok(Discretization {
        edges,
        labels,
        assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    NumericBinned,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub class_values: Vec<String>,
}

/// Slot layout of a one-hot encoding: each feature owns a contiguous run of
/// `class_count` columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Layout {
    class_counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Layout {
    type Error = String;

    fn try_from(counts: Vec<usize>) -> Result<Self, Self::Error> {
        Layout::new(counts)
    }
}

impl From<Layout> for Vec<usize> {
    fn from(l: Layout) -> Self {
        l.class_counts
    }
}

impl Layout {
    pub fn new(class_counts: Vec<usize>) -> Result<Self, String> {
        if class_counts.is_empty() {
            return Err("layout has no features".into());
        }
        if let Some(f) = class_counts.iter().position(|&c| c == 0) {
            return Err(format!("feature {f} has no classes"));
        }
        let mut offsets = Vec::with_capacity(class_counts.len());
        let mut acc = 0;
        for &c in &class_counts {
            offsets.push(acc);
            acc += c;
        }
        Ok(Self {
            class_counts,
            offsets,
        })
    }

    pub fn n_features(&self) -> usize {
        self.class_counts.len()
    }

    /// Total number of slots.
    pub fn width(&self) -> usize {
        self.offsets.last().unwrap() + self.class_counts.last().unwrap()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_count(&self, feature: usize) -> usize {
        self.class_counts[feature]
    }

    pub fn range(&self, feature: usize) -> Range<usize> {
        let o = self.offsets[feature];
        o..o + self.class_counts[feature]
    }

    pub fn slot(&self, feature: usize, class: usize) -> usize {
        debug_assert!(class < self.class_counts[feature]);
        self.offsets[feature] + class
    }
}

/// Discretized transactions: one class index per feature per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionTable {
    features: Vec<Feature>,
    rows: Vec<Vec<usize>>,
    bin_edges: BTreeMap<String, Vec<f64>>,
}

impl TransactionTable {
    pub fn new(
        features: Vec<Feature>,
        rows: Vec<Vec<usize>>,
        bin_edges: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, TransactError> {
        let mut names = BTreeSet::new();
        for f in &features {
            if !names.insert(f.name.as_str()) {
                return Err(TransactError::Shape(format!("duplicate feature `{}`", f.name)));
            }
            if f.class_values.is_empty() {
                return Err(TransactError::Shape(format!("feature `{}` has no classes", f.name)));
            }
            let distinct: BTreeSet<&String> = f.class_values.iter().collect();
            if distinct.len() != f.class_values.len() {
                return Err(TransactError::Shape(format!(
                    "feature `{}` repeats a class value",
                    f.name
                )));
            }
            if f.kind == FeatureKind::NumericBinned {
                let edges = bin_edges.get(&f.name).map(Vec::as_slice).unwrap_or(&[]);
                if edges.len() + 1 != f.class_values.len()
                    || edges.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(TransactError::Shape(format!(
                        "bin edges of `{}` do not match its classes",
                        f.name
                    )));
                }
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != features.len() {
                return Err(TransactError::Shape(format!(
                    "row {r} has {} values for {} features",
                    row.len(),
                    features.len()
                )));
            }
            for (f, &c) in row.iter().enumerate() {
                if c >= features[f].class_values.len() {
                    return Err(TransactError::UnknownClass {
                        feature: features[f].name.clone(),
                        value: c.to_string(),
                    });
                }
            }
        }
        Ok(Self {
            features,
            rows,
            bin_edges,
        })
    }

    /// Builds a categorical table from string cells. Class values of each
    /// feature are its distinct cells in sorted order.
    pub fn from_labels<S: AsRef<str>>(
        names: &[S],
        rows: &[Vec<S>],
    ) -> Result<Self, TransactError> {
        let mut classes: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); names.len()];
        for row in rows {
            if row.len() != names.len() {
                return Err(TransactError::Shape("ragged rows".into()));
            }
            for (f, v) in row.iter().enumerate() {
                classes[f].insert(v.as_ref());
            }
        }
        let features: Vec<Feature> = names
            .iter()
            .zip(&classes)
            .map(|(n, cs)| Feature {
                name: n.as_ref().to_string(),
                kind: FeatureKind::Categorical,
                class_values: cs.iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        let indexed = rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(f, v)| {
                        features[f]
                            .class_values
                            .iter()
                            .position(|c| c == v.as_ref())
                            .unwrap()
                    })
                    .collect()
            })
            .collect();
        Self::new(features, indexed, BTreeMap::new())
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn bin_edges(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.bin_edges
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn class_index(&self, feature: usize, value: &str) -> Option<usize> {
        self.features[feature]
            .class_values
            .iter()
            .position(|c| c == value)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.features.iter().map(|f| f.class_values.len()).collect())
            .expect("table features always have classes")
    }

    /// Rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            features: self.features.clone(),
            rows: perm.iter().map(|&i| self.rows[i].clone()).collect(),
            bin_edges: self.bin_edges.clone(),
        }
    }
}

/// Graph context used to enrich transactions.
#[derive(Debug, Clone, Copy)]
pub struct Enrichment<'a> {
    pub graph: &'a PropertyGraph,
    pub binding: &'a Binding,
    pub options: EnrichOptions,
}

fn numeric_feature(
    name: String,
    values: &[f64],
    intervals: usize,
    bin_edges: &mut BTreeMap<String, Vec<f64>>,
) -> Result<(Feature, Vec<usize>), TransactError> {
    let d = discretize_equal_frequency(values, intervals)?;
    bin_edges.insert(name.clone(), d.edges);
    Ok((
        Feature {
            name,
            kind: FeatureKind::NumericBinned,
            class_values: d.labels,
        },
        d.assignment,
    ))
}

fn categorical_feature(name: String, values: &[&str]) -> (Feature, Vec<usize>) {
    let classes: Vec<String> = values
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let column = values
        .iter()
        .map(|v| classes.iter().position(|c| c == v).unwrap())
        .collect();
    (
        Feature {
            name,
            kind: FeatureKind::Categorical,
            class_values: classes,
        },
        column,
    )
}

/// Builds one transaction per timestamp at which all sensors report. Each
/// sensor yields a measurement feature named after it. With enrichment every
/// sensor also contributes its semantic items as `<sensor>.<item feature>`.
/// Numeric columns, including numeric graph properties, are discretized
/// with `intervals` equal-frequency bins.
pub fn build_transactions(
    series: &SensorSeries,
    enrichment: Option<Enrichment<'_>>,
    intervals: usize,
) -> Result<TransactionTable, TransactError> {
    if intervals == 0 {
        return Err(TransactError::InvalidIntervals);
    }
    let timestamps = series.complete_timestamps();
    if timestamps.is_empty() {
        return Err(TransactError::EmptySeries);
    }
    let n = timestamps.len();
    let sensors: Vec<&str> = series.sensors().collect();

    let mut features = Vec::new();
    let mut columns: Vec<Vec<usize>> = Vec::new();
    let mut bin_edges = BTreeMap::new();

    for &s in &sensors {
        let per = &series.readings[s];
        let cells: Vec<&Reading> = timestamps.iter().map(|t| &per[t]).collect();
        let (feat, col) = if series.is_numeric(s) {
            let xs: Vec<f64> = cells
                .iter()
                .map(|r| match r {
                    Reading::Num(x) => *x,
                    Reading::Cat(_) => unreachable!(),
                })
                .collect();
            numeric_feature(s.to_string(), &xs, intervals, &mut bin_edges)?
        } else {
            let xs: Vec<&str> = cells
                .iter()
                .map(|r| match r {
                    Reading::Cat(c) => c.as_str(),
                    Reading::Num(_) => unreachable!(),
                })
                .collect();
            categorical_feature(s.to_string(), &xs)
        };
        features.push(feat);
        columns.push(col);
    }

    if let Some(ctx) = enrichment {
        ctx.binding.check_total(sensors.iter().copied())?;
        for &s in &sensors {
            for item in graph::semantic_items_with(ctx.graph, ctx.binding, s, ctx.options)? {
                let name = format!("{s}.{}", item.feature);
                let (feat, col) = match item.value {
                    PropValue::Number(x) => {
                        numeric_feature(name, &vec![x; n], intervals, &mut bin_edges)?
                    }
                    PropValue::Text(t) => categorical_feature(name, &vec![t.as_str(); n]),
                };
                features.push(feat);
                columns.push(col);
            }
        }
    }

    let rows = (0..n)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect();
    TransactionTable::new(features, rows, bin_edges)
}

/// Row-major one-hot matrix with its slot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    layout: Layout,
    n_rows: usize,
    data: Vec<f64>,
}

impl EncodedMatrix {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Class index per feature per row, taken as the hot slot.
    pub fn decode(&self) -> Vec<Vec<usize>> {
        (0..self.n_rows)
            .map(|r| {
                let row = self.row(r);
                (0..self.layout.n_features())
                    .map(|f| {
                        let slots = &row[self.layout.range(f)];
                        slots
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                                if v > best.1 {
                                    (i, v)
                                } else {
                                    best
                                }
                            })
                            .0
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn one_hot_encode(table: &TransactionTable) -> Result<EncodedMatrix, TransactError> {
    let layout = table.layout();
    let w = layout.width();
    let mut data = vec![0.0; table.n_rows() * w];
    for (r, row) in table.rows.iter().enumerate() {
        for (f, &c) in row.iter().enumerate() {
            if c >= layout.class_count(f) {
                return Err(TransactError::UnknownClass {
                    feature: table.features[f].name.clone(),
                    value: c.to_string(),
                });
            }
            data[r * w + layout.slot(f, c)] = 1.0;
        }
    }
    Ok(EncodedMatrix {
        layout,
        n_rows: table.n_rows(),
        data,
    })
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(t) = raw.parse::<i64>() {
        return Some(t);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| chrono::NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Reads `timestamp,sensor_id,value` CSV. A sensor whose values all parse
/// as finite numbers is numeric; otherwise all its values are categorical.
pub fn read_sensor_csv<R: Read>(source: R) -> Result<SensorSeries, TransactError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = rdr.headers().map_err(|e| TransactError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["timestamp", "sensor_id", "value"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(TransactError::Csv {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut raw: Vec<(String, i64, String)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TransactError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(TransactError::Csv {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| TransactError::Csv {
            line,
            message: format!("bad timestamp `{}`", &rec[0]),
        })?;
        raw.push((rec[1].to_string(), ts, rec[2].to_string()));
    }
    if raw.is_empty() {
        return Err(TransactError::EmptySeries);
    }

    let mut numeric: BTreeMap<&str, bool> = BTreeMap::new();
    for (s, _, v) in &raw {
        let is_num = v.parse::<f64>().is_ok_and(f64::is_finite);
        numeric
            .entry(s.as_str())
            .and_modify(|n| *n &= is_num)
            .or_insert(is_num);
    }
    let numeric: BTreeMap<String, bool> =
        numeric.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    SensorSeries::from_readings(raw.into_iter().map(|(s, t, v)| {
        let reading = if numeric[&s] {
            Reading::Num(v.parse().unwrap())
        } else {
            Reading::Cat(v)
        };
        (s, t, reading)
    }))
}

/// Writes readings ordered by timestamp then sensor. Categorical values are quoted.
pub fn write_sensor_csv<W: Write>(series: &SensorSeries, sink: W) -> Result<(), TransactError> {
    let mut rows: Vec<(i64, &str, &Reading)> = series
        .readings
        .iter()
        .flat_map(|(s, per)| per.iter().map(move |(t, r)| (*t, s.as_str(), r)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut out = String::from("timestamp,sensor_id,value\n");
    for (t, s, r) in rows {
        match r {
            Reading::Num(x) => out.push_str(&format!("{t},{s},{x}\n")),
            Reading::Cat(c) => out.push_str(&format!("{t},{s},\"{}\"\n", c.replace('"', "\"\""))),
        }
    }
    let mut sink = sink;
    sink.write_all(out.as_bytes()).map_err(|e| TransactError::Csv {
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_graph_str;
    use proptest::prelude::*;

    fn num(s: &str, t: i64, x: f64) -> (String, i64, Reading) {
        (s.to_string(), t, Reading::Num(x))
    }

    fn cat(s: &str, t: i64, x: &str) -> (String, i64, Reading) {
        (s.to_string(), t, Reading::Cat(x.to_string()))
    }

    #[test]
    fn aggregate_takes_mean() {
        let s = SensorSeries::from_readings([num("s1", 0, 2.0), num("s1", 30, 4.0)]).unwrap();
        let a = aggregate(&s, 60).unwrap();
        assert_eq!(a.get("s1", 0), Some(&Reading::Num(3.0)));
    }

    #[test]
    fn aggregate_takes_mode() {
        let s = SensorSeries::from_readings([
            cat("door", 0, "open"),
            cat("door", 10, "open"),
            cat("door", 20, "closed"),
        ])
        .unwrap();
        let a = aggregate(&s, 60).unwrap();
        assert_eq!(a.get("door", 0), Some(&Reading::Cat("open".into())));
    }

    #[test]
    fn aggregate_mode_ties_pick_smallest() {
        let s = SensorSeries::from_readings([cat("door", 0, "open"), cat("door", 10, "closed")])
            .unwrap();
        let a = aggregate(&s, 60).unwrap();
        assert_eq!(a.get("door", 0), Some(&Reading::Cat("closed".into())));
    }

    #[test]
    fn aggregate_keeps_only_complete_windows() {
        let s = SensorSeries::from_readings([
            num("s1", 5, 1.0),
            num("s1", 65, 2.0),
            num("s2", 10, 7.0),
        ])
        .unwrap();
        let a = aggregate(&s, 60).unwrap();
        assert_eq!(a.complete_timestamps(), vec![0]);
        assert_eq!(a.readings_of("s1").unwrap().len(), 1);
    }

    #[test]
    fn aggregate_rejects_empty_and_bad_window() {
        let empty = SensorSeries::default();
        assert!(matches!(aggregate(&empty, 60), Err(TransactError::EmptySeries)));
        let s = SensorSeries::from_readings([num("s1", 0, 1.0)]).unwrap();
        assert!(matches!(aggregate(&s, 0), Err(TransactError::InvalidWindow(0))));
    }

    #[test]
    fn series_rejects_duplicates_and_mixed_kinds() {
        assert!(matches!(
            SensorSeries::from_readings([num("s", 0, 1.0), num("s", 0, 2.0)]),
            Err(TransactError::DuplicateReading { .. })
        ));
        assert!(matches!(
            SensorSeries::from_readings([num("s", 0, 1.0), cat("s", 1, "x")]),
            Err(TransactError::MixedKinds(_))
        ));
    }

    #[test]
    fn equal_frequency_exact_split() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let d = discretize_equal_frequency(&xs, 2).unwrap();
        assert_eq!(d.edges, vec![5.0]);
        assert_eq!(d.labels, vec!["1-5", "6-10"]);
        assert_eq!(d.assignment, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn equal_frequency_constant_column_collapses() {
        let d = discretize_equal_frequency(&[7.0, 7.0, 7.0], 10).unwrap();
        assert!(d.edges.is_empty());
        assert_eq!(d.labels, vec!["7-7"]);
        assert_eq!(d.assignment, vec![0, 0, 0]);
    }

    #[test]
    fn equal_frequency_labels_use_observed_range() {
        let xs = [13.0, 17.0, 23.5, 31.0];
        let d = discretize_equal_frequency(&xs, 2).unwrap();
        assert_eq!(d.labels, vec!["13-17", "23.5-31"]);
        assert_eq!(d.class_of(17.0), 0);
        assert_eq!(d.class_of(18.0), 1);
        assert_eq!(d.class_of(1e9), 1);
    }

    #[test]
    fn equal_frequency_rejects_bad_input() {
        assert!(discretize_equal_frequency(&[1.0], 0).is_err());
        assert!(discretize_equal_frequency(&[], 3).is_err());
        assert!(discretize_equal_frequency(&[f64::NAN], 3).is_err());
    }

    #[test]
    fn equal_frequency_with_ties_merges_bins() {
        let xs = [1.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let d = discretize_equal_frequency(&xs, 3).unwrap();
        // positions 2 and 4 both hold 1.0
        assert_eq!(d.edges, vec![1.0]);
        assert_eq!(d.labels, vec!["1-1", "2-3"]);
    }

    proptest! {
        #[test]
        fn equal_frequency_balanced_without_duplicates(
            raw in proptest::collection::btree_set(-100_000i32..100_000, 1..200),
            intervals in 1usize..12,
        ) {
            let mut xs: Vec<f64> = raw.into_iter().map(f64::from).collect();
            let m = xs.len() - xs.len() % intervals;
            prop_assume!(m > 0);
            xs.truncate(m);
            let d = discretize_equal_frequency(&xs, intervals).unwrap();
            let mut counts = vec![0usize; d.labels.len()];
            for &a in &d.assignment {
                counts[a] += 1;
            }
            let want = m / intervals;
            prop_assert!(counts.iter().all(|&c| c == want), "{:?}", counts);
        }

        #[test]
        fn equal_frequency_assignment_is_monotone(
            xs in proptest::collection::vec(-50i32..50, 1..100),
            intervals in 1usize..10,
        ) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let d = discretize_equal_frequency(&xs, intervals).unwrap();
            prop_assert!(d.labels.len() <= intervals);
            prop_assert!(d.edges.windows(2).all(|w| w[0] < w[1]));
            for (i, &a) in xs.iter().enumerate() {
                for (j, &b) in xs.iter().enumerate() {
                    if a < b {
                        prop_assert!(d.assignment[i] <= d.assignment[j]);
                    }
                }
            }
            let distinct: BTreeSet<&String> = d.labels.iter().collect();
            prop_assert_eq!(distinct.len(), d.labels.len());
        }
    }

    #[test]
    fn two_sensors_without_enrichment() {
        let mut readings = Vec::new();
        for t in 0..40 {
            readings.push(num("a", t, (t * 7 % 40) as f64));
            readings.push(num("b", t, (t * 3 % 40) as f64 / 2.0));
        }
        let s = SensorSeries::from_readings(readings).unwrap();
        let table = build_transactions(&s, None, 10).unwrap();
        assert_eq!(table.n_features(), 2);
        assert_eq!(table.n_rows(), 40);
        for f in table.features() {
            assert_eq!(f.class_values.len(), 10);
        }
    }

    const PIPE: &str = r#"{"ontology": {"classes": ["Pipe"], "relations": [], "properties": ["length"], "owned": {}},
        "nodes": [{"id": "P1", "labels": ["Pipe"], "props": {"length": 850}}], "bindings": {"s1": "P1"}}"#;

    #[test]
    fn enrichment_depth_zero_adds_type_and_length() {
        let b = load_graph_str(PIPE).unwrap();
        let s = SensorSeries::from_readings((0..5).map(|t| num("s1", t, t as f64))).unwrap();
        let ctx = Enrichment {
            graph: &b.graph,
            binding: &b.binding,
            options: EnrichOptions {
                depth: 0,
                edge_properties: false,
            },
        };
        let table = build_transactions(&s, Some(ctx), 10).unwrap();
        let names: Vec<&str> = table.features().iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["s1", "s1.self.Pipe.length", "s1.self.type"]);
        assert_eq!(table.features()[1].class_values, vec!["850-850"]);
        assert_eq!(table.features()[2].class_values, vec!["Pipe"]);
    }

    #[test]
    fn enrichment_requires_total_binding() {
        let b = load_graph_str(PIPE).unwrap();
        let s = SensorSeries::from_readings([num("s1", 0, 1.0), num("s9", 0, 1.0)]).unwrap();
        let ctx = Enrichment {
            graph: &b.graph,
            binding: &b.binding,
            options: EnrichOptions::default(),
        };
        assert!(matches!(
            build_transactions(&s, Some(ctx), 10),
            Err(TransactError::Graph(GraphError::UnboundSensor(_)))
        ));
    }

    #[test]
    fn one_hot_layout_of_two_features() {
        let t = TransactionTable::from_labels(
            &["f1", "f2"],
            &[vec!["a", "c"], vec!["b", "d"], vec!["a", "e"]],
        )
        .unwrap();
        let m = one_hot_encode(&t).unwrap();
        assert_eq!(m.layout().class_counts(), &[2, 3]);
        assert_eq!(m.row(0), &[1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn table_rejects_out_of_range_class() {
        let f = Feature {
            name: "f".into(),
            kind: FeatureKind::Categorical,
            class_values: vec!["a".into(), "b".into()],
        };
        assert!(matches!(
            TransactionTable::new(vec![f], vec![vec![2]], BTreeMap::new()),
            Err(TransactError::UnknownClass { .. })
        ));
    }

    fn table_strategy() -> impl Strategy<Value = TransactionTable> {
        proptest::collection::vec(1usize..5, 1..6).prop_flat_map(|counts| {
            let row = counts.iter().map(|&c| 0..c).collect::<Vec<_>>();
            proptest::collection::vec(row, 1..20).prop_map(move |rows| {
                let features = counts
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| Feature {
                        name: format!("f{i}"),
                        kind: FeatureKind::Categorical,
                        class_values: (0..c).map(|k| format!("v{k}")).collect(),
                    })
                    .collect();
                TransactionTable::new(features, rows, BTreeMap::new()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn one_hot_round_trip_and_group_sums(table in table_strategy()) {
            let m = one_hot_encode(&table).unwrap();
            prop_assert_eq!(m.decode(), table.rows().to_vec());
            for r in 0..m.n_rows() {
                for f in 0..m.layout().n_features() {
                    let s: f64 = m.row(r)[m.layout().range(f)].iter().sum();
                    prop_assert_eq!(s, 1.0);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_and_kind_detection() {
        let text = "timestamp,sensor_id,value\n0,s1,1.5\n0,door,\"open\"\n60,s1,2\n2024-01-01T00:00:00Z,door,closed\n";
        let s = read_sensor_csv(text.as_bytes()).unwrap();
        assert!(s.is_numeric("s1"));
        assert!(!s.is_numeric("door"));
        assert_eq!(s.get("door", 1_704_067_200), Some(&Reading::Cat("closed".into())));
        let mut buf = Vec::new();
        write_sensor_csv(&s, &mut buf).unwrap();
        let again = read_sensor_csv(buf.as_slice()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "timestamp,sensor_id,value\n0,s1,1\nyesterday,s1,2\n";
        match read_sensor_csv(text.as_bytes()) {
            Err(TransactError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_sensor_csv("ts,id,v\n".as_bytes()).is_err());
    }
}
