//! Dataset loading, validation, and time-period stratification.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use chrono::{DateTime, Months, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::Serialize;
use thiserror::Error;

/// Canonical order of the 14 change metrics.
pub const METRIC_NAMES: [&str; 14] = [
    "la", "ld", "lt", "ns", "nd", "nf", "entropy", "nuc", "ndev", "age", "exp", "rexp", "sexp",
    "fix",
];

/// Index of a metric name in [`METRIC_NAMES`].
pub fn metric_index(name: &str) -> Option<usize> {
    METRIC_NAMES.iter().position(|&m| m == name)
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input contains a header but no data rows")]
    EmptyInput,
    #[error("schema mismatch: column {column:?} (mapped from {logical:?}) not found in header")]
    SchemaMismatch { logical: String, column: String },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate record id {id:?} at line {line}")]
    DuplicateId { id: String, line: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One commit-level change: identity, time, 14 metrics, defect label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeRecord {
    pub id: String,
    /// Seconds since epoch, UTC.
    pub timestamp: i64,
    /// Values in [`METRIC_NAMES`] order.
    pub metrics: [f64; 14],
    /// true = fix-inducing (defective).
    pub label: bool,
}

impl ChangeRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        metric_index(name).map(|i| self.metrics[i])
    }
}

/// A validated change dataset, sorted ascending by (timestamp, id).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<ChangeRecord>,
}

/// One time window of a periodized dataset. Indexes start at 1.
#[derive(Debug, Clone)]
pub struct Period {
    pub index: usize,
    /// Inclusive start, epoch seconds.
    pub start: i64,
    /// Exclusive end, epoch seconds.
    pub end: i64,
    pub records: Vec<ChangeRecord>,
}

#[derive(Debug, Clone)]
pub struct PeriodizedDataset {
    pub periods: Vec<Period>,
    pub window_months: u32,
}

impl PeriodizedDataset {
    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    /// Period by 1-based index.
    pub fn period(&self, index: usize) -> &Period {
        &self.periods[index - 1]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub n_changes: usize,
    pub defect_ratio: f64,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
}

/// Maps logical column names to header names in the input file.
///
/// Logical names are `id`, `timestamp`, `label`, and the 14 metric names.
#[derive(Debug, Clone)]
pub struct SchemaMap {
    mapping: HashMap<String, String>,
}

impl Default for SchemaMap {
    fn default() -> Self {
        let mut mapping = HashMap::new();
        mapping.insert("id".to_string(), "commit_id".to_string());
        mapping.insert("timestamp".to_string(), "commit_ts".to_string());
        mapping.insert("label".to_string(), "bug".to_string());
        for m in METRIC_NAMES {
            mapping.insert(m.to_string(), m.to_string());
        }
        SchemaMap { mapping }
    }
}

impl SchemaMap {
    /// Override the header name for one logical column.
    pub fn set(&mut self, logical: &str, header: &str) {
        self.mapping.insert(logical.to_string(), header.to_string());
    }

    pub fn header_for(&self, logical: &str) -> &str {
        &self.mapping[logical]
    }
}

fn parse_timestamp(raw: &str) -> Result<i64, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.with_timezone(&Utc).timestamp());
    }
    if let Ok(ndt) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S") {
        return Ok(ndt.and_utc().timestamp());
    }
    if let Ok(nd) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(nd.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    Err(format!("unparseable timestamp {raw:?}"))
}

fn parse_label(raw: &str) -> Result<bool, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(format!("unparseable label {other:?}")),
    }
}

/// Metrics that must be nonnegative (all of them, per the schema).
fn validate_metrics(metrics: &[f64; 14]) -> Result<(), String> {
    for (i, &v) in metrics.iter().enumerate() {
        let name = METRIC_NAMES[i];
        if !v.is_finite() {
            return Err(format!("metric {name} is not finite"));
        }
        if v < 0.0 {
            return Err(format!("metric {name} is negative ({v})"));
        }
    }
    let fix = metrics[13];
    if fix != 0.0 && fix != 1.0 {
        return Err(format!("metric fix must be 0 or 1, got {fix}"));
    }
    Ok(())
}

/// Load a delimited change dataset. Fail-fast: any malformed row aborts
/// the whole load with its line number.
pub fn load_dataset<R: Read>(
    source: R,
    schema: &SchemaMap,
    name: &str,
    delimiter: u8,
) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let col = |logical: &str| -> Result<usize, IngestError> {
        let header = schema.header_for(logical);
        headers
            .iter()
            .position(|h| h == header)
            .ok_or_else(|| IngestError::SchemaMismatch {
                logical: logical.to_string(),
                column: header.to_string(),
            })
    };

    let id_col = col("id")?;
    let ts_col = col("timestamp")?;
    let label_col = col("label")?;
    let metric_cols: Vec<usize> = METRIC_NAMES
        .iter()
        .map(|m| col(m))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for result in reader.records() {
        let row = result?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };

        let id = row.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(malformed("empty id".to_string()));
        }
        let timestamp = parse_timestamp(row.get(ts_col).unwrap_or("")).map_err(&malformed)?;
        if timestamp <= 0 {
            return Err(malformed(format!("timestamp must be positive, got {timestamp}")));
        }
        let label = parse_label(row.get(label_col).unwrap_or("")).map_err(&malformed)?;
        let mut metrics = [0.0f64; 14];
        for (slot, &c) in metrics.iter_mut().zip(&metric_cols) {
            let raw = row.get(c).unwrap_or("");
            *slot = raw
                .parse::<f64>()
                .map_err(|_| malformed(format!("unparseable metric value {raw:?}")))?;
        }
        validate_metrics(&metrics).map_err(&malformed)?;

        if !seen_ids.insert(id.clone()) {
            return Err(IngestError::DuplicateId { id, line });
        }
        records.push(ChangeRecord {
            id,
            timestamp,
            metrics,
            label,
        });
    }

    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    records.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
    Ok(Dataset {
        name: name.to_string(),
        records,
    })
}

fn datetime(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(secs, 0).unwrap()
}

/// Period boundary k: first timestamp plus k calendar windows.
/// Day-of-month clamps to month length (Jan 31 + 1 month = Feb 28/29).
fn boundary(start: DateTime<Utc>, window_months: u32, k: u32) -> i64 {
    start
        .checked_add_months(Months::new(window_months * k))
        .expect("period boundary overflow")
        .timestamp()
}

/// Stratify a dataset into consecutive calendar windows of
/// `window_months` months, starting at the first record's timestamp.
/// The trailing partial window is kept as a period.
pub fn stratify(dataset: &Dataset, window_months: u32) -> PeriodizedDataset {
    assert!(window_months >= 1, "window_months must be >= 1");
    let start = datetime(dataset.records[0].timestamp);

    let mut periods = Vec::new();
    let mut iter = dataset.records.iter().cloned().peekable();
    let mut k = 0u32;
    while iter.peek().is_some() {
        let lo = boundary(start, window_months, k);
        let hi = boundary(start, window_months, k + 1);
        let mut bucket = Vec::new();
        while let Some(r) = iter.peek() {
            if r.timestamp < hi {
                bucket.push(iter.next().unwrap());
            } else {
                break;
            }
        }
        periods.push(Period {
            index: periods.len() + 1,
            start: lo,
            end: hi,
            records: bucket,
        });
        k += 1;
    }
    // Empty interior windows are kept so boundaries stay contiguous, but
    // a dataset never starts with one (period 1 holds the first record).
    PeriodizedDataset {
        periods,
        window_months,
    }
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    let n = dataset.records.len();
    let defective = dataset.records.iter().filter(|r| r.label).count();
    DatasetSummary {
        n_changes: n,
        defect_ratio: defective as f64 / n as f64,
        first_timestamp: dataset.records[0].timestamp,
        last_timestamp: dataset.records[n - 1].timestamp,
    }
}
