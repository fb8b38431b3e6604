//! Irregular-series data model, file ingestion, and preprocessing.
//!
//! The pipeline mirrors how the training CLI consumes data: load records,
//! shift each series so time starts at zero, fit per-feature statistics on
//! observed entries of the training split, standardize, impute what's
//! missing, then pad/truncate into batches with an explicit step mask.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("record {id}: {message}")]
    BadRecord { id: String, message: String },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot fit statistics on an empty dataset")]
    EmptyDataset,
}

/// One subject's measurement sequence: strictly increasing timestamps in
/// hours, a T x d value matrix, and a matching observation mask
/// (false = the entry was missing before imputation).
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularSeries {
    pub id: String,
    pub timestamps: Vec<f64>,
    /// Row-major T x d. Missing entries hold 0.0 until imputation runs.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub d: usize,
}

impl IrregularSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn value(&self, step: usize, feature: usize) -> f64 {
        self.values[step * self.d + feature]
    }

    pub fn is_observed(&self, step: usize, feature: usize) -> bool {
        self.observed[step * self.d + feature]
    }
}

/// Per-feature standardization statistics. `std` entries are always
/// strictly positive; degenerate features get std = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Identity statistics (mean 0, std 1) for `d` features.
    pub fn identity(d: usize) -> Self {
        FeatureStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }
}

/// A labeled collection of series sharing one feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<(IrregularSeries, u8)>,
    pub stats: FeatureStats,
    pub schema: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<(IrregularSeries, u8)>, schema: Vec<String>) -> Self {
        let d = schema.len();
        Dataset {
            items,
            stats: FeatureStats::identity(d),
            schema,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d(&self) -> usize {
        self.schema.len()
    }
}

/// A right-padded batch: B x L x d values, B x L timestamps, and a step
/// mask that is true on real steps and false on padding. Padded positions
/// hold zero values and repeat the last real timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub values: Vec<f64>,
    pub timestamps: Vec<f64>,
    pub seq_mask: Vec<bool>,
    pub labels: Vec<u8>,
    pub b: usize,
    pub l: usize,
    pub d: usize,
}

impl PaddedBatch {
    /// Value slice of one step: `values[b, t, :]`.
    pub fn step_values(&self, item: usize, step: usize) -> &[f64] {
        let start = (item * self.l + step) * self.d;
        &self.values[start..start + self.d]
    }

    /// Number of real (unpadded) steps of one item.
    pub fn real_len(&self, item: usize) -> usize {
        self.seq_mask[item * self.l..(item + 1) * self.l]
            .iter()
            .filter(|&&m| m)
            .count()
    }
}

/// On-disk record shape: one JSON object per line. `null` marks a missing
/// measurement.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    label: u8,
    t: Vec<f64>,
    x: Vec<Vec<Option<f64>>>,
}

/// Load a dataset from `path`. A `.csv` extension selects the long format
/// (`id,t,feature,value,label`, one measurement per row, absent or empty
/// values meaning missing); anything else is read as JSONL. Timestamps are
/// sorted; duplicate timestamps keep the last occurrence.
pub fn load_records(path: &Path, schema: &[String]) -> Result<Dataset, DataError> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        load_csv(path, schema)
    } else {
        load_jsonl(path, schema)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: String) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

fn load_jsonl(path: &Path, schema: &[String]) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let d = schema.len();
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let series = record_to_series(raw, d)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        items.push(series);
    }
    Ok(Dataset::new(items, schema.to_vec()))
}

fn record_to_series(raw: RawRecord, d: usize) -> Result<(IrregularSeries, u8), DataError> {
    if raw.label > 1 {
        return Err(DataError::BadRecord {
            id: raw.id,
            message: format!("label must be 0 or 1, got {}", raw.label),
        });
    }
    if raw.t.is_empty() {
        return Err(DataError::BadRecord {
            id: raw.id,
            message: "record has no steps".into(),
        });
    }
    if raw.t.len() != raw.x.len() {
        return Err(DataError::BadRecord {
            id: raw.id,
            message: format!("{} timestamps but {} value rows", raw.t.len(), raw.x.len()),
        });
    }
    for (i, &t) in raw.t.iter().enumerate() {
        if !t.is_finite() {
            return Err(DataError::BadRecord {
                id: raw.id,
                message: format!("non-finite timestamp at step {i}"),
            });
        }
        if raw.x[i].len() != d {
            return Err(DataError::BadRecord {
                id: raw.id,
                message: format!(
                    "step {i} has {} features, schema has {d}",
                    raw.x[i].len()
                ),
            });
        }
        for (j, v) in raw.x[i].iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(DataError::BadRecord {
                        id: raw.id,
                        message: format!("non-finite value at step {i}, feature {j}"),
                    });
                }
            }
        }
    }

    // Sort steps by timestamp; among equal timestamps the last occurrence
    // wins (stable sort keeps input order within ties, dedup keeps the tail).
    let mut order: Vec<usize> = (0..raw.t.len()).collect();
    order.sort_by(|&a, &b| raw.t[a].partial_cmp(&raw.t[b]).unwrap());
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        if let Some(&last) = kept.last() {
            if raw.t[last] == raw.t[i] {
                kept.pop();
            }
        }
        kept.push(i);
    }

    let t_len = kept.len();
    let mut timestamps = Vec::with_capacity(t_len);
    let mut values = vec![0.0; t_len * d];
    let mut observed = vec![false; t_len * d];
    for (row, &i) in kept.iter().enumerate() {
        timestamps.push(raw.t[i]);
        for j in 0..d {
            if let Some(v) = raw.x[i][j] {
                values[row * d + j] = v;
                observed[row * d + j] = true;
            }
        }
    }
    Ok((
        IrregularSeries {
            id: raw.id,
            timestamps,
            values,
            observed,
            d,
        },
        raw.label,
    ))
}

fn load_csv(path: &Path, schema: &[String]) -> Result<Dataset, DataError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        t: f64,
        feature: String,
        value: Option<f64>,
        label: u8,
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;

    let feature_index: HashMap<&str, usize> = schema
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();

    // id -> (label, t -> sparse feature row), ids kept in first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut per_id: HashMap<String, (u8, Vec<(f64, usize, Option<f64>)>)> = HashMap::new();

    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let lineno = idx + 2; // header occupies line 1
        let row = row.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if !row.t.is_finite() {
            return Err(parse_err(path, lineno, "non-finite timestamp".into()));
        }
        if let Some(v) = row.value {
            if !v.is_finite() {
                return Err(parse_err(path, lineno, "non-finite value".into()));
            }
        }
        let &feature = feature_index.get(row.feature.as_str()).ok_or_else(|| {
            parse_err(
                path,
                lineno,
                format!("unknown feature name {:?}", row.feature),
            )
        })?;
        if row.label > 1 {
            return Err(parse_err(path, lineno, format!("label must be 0 or 1, got {}", row.label)));
        }
        match per_id.get_mut(&row.id) {
            None => {
                order.push(row.id.clone());
                per_id.insert(row.id, (row.label, vec![(row.t, feature, row.value)]));
            }
            Some((label, cells)) => {
                if *label != row.label {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("conflicting labels for id {:?}", row.id),
                    ));
                }
                cells.push((row.t, feature, row.value));
            }
        }
    }

    let d = schema.len();
    let mut items = Vec::with_capacity(order.len());
    for id in order {
        let (label, cells) = per_id.remove(&id).unwrap();
        // Distinct timestamps in sorted order; later rows overwrite earlier
        // ones at the same (t, feature), matching the duplicate rule.
        let mut ts: Vec<f64> = cells.iter().map(|&(t, _, _)| t).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        let t_len = ts.len();
        let mut values = vec![0.0; t_len * d];
        let mut observed = vec![false; t_len * d];
        for (t, feature, value) in cells {
            let row = ts.partition_point(|&u| u < t);
            debug_assert!(ts[row] == t);
            match value {
                Some(v) => {
                    values[row * d + feature] = v;
                    observed[row * d + feature] = true;
                }
                None => {
                    values[row * d + feature] = 0.0;
                    observed[row * d + feature] = false;
                }
            }
        }
        items.push((
            IrregularSeries {
                id,
                timestamps: ts,
                values,
                observed,
                d,
            },
            label,
        ));
    }
    Ok(Dataset::new(items, schema.to_vec()))
}

/// Write a dataset as JSONL in the same record format `load_records` reads.
pub fn write_records(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    );
    for (series, label) in &dataset.items {
        let x: Vec<Vec<Option<f64>>> = (0..series.len())
            .map(|i| {
                (0..series.d)
                    .map(|j| series.is_observed(i, j).then(|| series.value(i, j)))
                    .collect()
            })
            .collect();
        let raw = RawRecord {
            id: series.id.clone(),
            label: *label,
            t: series.timestamps.clone(),
            x,
        };
        let line = serde_json::to_string(&raw).expect("record serialization cannot fail");
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Shift timestamps so the first equals 0, preserving order and gaps.
/// Applying it twice equals applying it once.
pub fn normalize_time(series: &IrregularSeries) -> IrregularSeries {
    let t0 = series.timestamps[0];
    let mut out = series.clone();
    for t in &mut out.timestamps {
        *t -= t0;
    }
    out
}

/// Fill missing entries per feature: forward-fill from the last observed
/// value; a run of missing entries at the head takes that feature's mean.
/// The observation mask is preserved for provenance.
pub fn impute_missing(series: &IrregularSeries, feature_means: &[f64]) -> IrregularSeries {
    assert_eq!(feature_means.len(), series.d);
    let mut out = series.clone();
    for j in 0..series.d {
        let mut last: Option<f64> = None;
        for i in 0..series.len() {
            let idx = i * series.d + j;
            if out.observed[idx] {
                last = Some(out.values[idx]);
            } else {
                out.values[idx] = last.unwrap_or(feature_means[j]);
            }
        }
    }
    out
}

/// Per-feature mean and population std over observed entries of every item.
/// Features with no observations or (near-)zero variance get std = 1 so
/// standardization stays total. Call on the training split only.
pub fn fit_standardizer(dataset: &Dataset) -> Result<FeatureStats, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let d = dataset.d();
    let mut count = vec![0u64; d];
    let mut sum = vec![0.0; d];
    for (series, _) in &dataset.items {
        for i in 0..series.len() {
            for j in 0..d {
                if series.is_observed(i, j) {
                    count[j] += 1;
                    sum[j] += series.value(i, j);
                }
            }
        }
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 })
        .collect();
    // Second pass over centered values for numerical robustness.
    let mut sq = vec![0.0; d];
    for (series, _) in &dataset.items {
        for i in 0..series.len() {
            for j in 0..d {
                if series.is_observed(i, j) {
                    let c = series.value(i, j) - mean[j];
                    sq[j] += c * c;
                }
            }
        }
    }
    let std: Vec<f64> = (0..d)
        .map(|j| {
            if count[j] == 0 {
                return 1.0;
            }
            let s = (sq[j] / count[j] as f64).sqrt();
            if s < 1e-8 {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(FeatureStats { mean, std })
}

/// Replace every value by (v - mean) / std and record the statistics on
/// the returned dataset.
pub fn standardize(dataset: &Dataset, stats: &FeatureStats) -> Result<Dataset, DataError> {
    let d = dataset.d();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(DataError::DimensionMismatch {
            expected: d,
            got: stats.mean.len(),
        });
    }
    let mut out = dataset.clone();
    for (series, _) in &mut out.items {
        for i in 0..series.len() {
            for j in 0..d {
                let idx = i * d + j;
                series.values[idx] = (series.values[idx] - stats.mean[j]) / stats.std[j];
            }
        }
    }
    out.stats = stats.clone();
    Ok(out)
}

/// Pad/truncate items into a batch. Sequences longer than `l_max` keep
/// their most recent `l_max` steps; shorter ones are right-padded. The
/// batch length L is the longest kept length, at most `l_max`.
pub fn make_batch(items: &[&(IrregularSeries, u8)], l_max: usize) -> PaddedBatch {
    assert!(!items.is_empty(), "make_batch requires at least one item");
    assert!(l_max >= 1);
    let d = items[0].0.d;
    let l = items
        .iter()
        .map(|(s, _)| s.len().min(l_max))
        .max()
        .unwrap();
    let b = items.len();
    let mut values = vec![0.0; b * l * d];
    let mut timestamps = vec![0.0; b * l];
    let mut seq_mask = vec![false; b * l];
    let mut labels = Vec::with_capacity(b);
    for (bi, (series, label)) in items.iter().enumerate() {
        let kept = series.len().min(l_max);
        let start = series.len() - kept; // most recent `kept` steps
        for i in 0..kept {
            let src = start + i;
            timestamps[bi * l + i] = series.timestamps[src];
            seq_mask[bi * l + i] = true;
            let vdst = (bi * l + i) * d;
            let vsrc = src * d;
            values[vdst..vdst + d].copy_from_slice(&series.values[vsrc..vsrc + d]);
        }
        // Padding repeats the last real timestamp; values stay zero.
        let last_t = series.timestamps[series.len() - 1];
        for i in kept..l {
            timestamps[bi * l + i] = last_t;
        }
        labels.push(*label);
    }
    PaddedBatch {
        values,
        timestamps,
        seq_mask,
        labels,
        b,
        l,
        d,
    }
}
