//! Plain-text `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, blank lines ignored. CLI
//! flags always override file values; the merge happens in the binary,
//! this module only parses and validates.

use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::SchemaMap;
use crate::synth::{DriftKind, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
}

/// Raw `(key, value)` pairs in file order, comments stripped.
fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Malformed {
                line,
                text: content.to_string(),
            });
        };
        pairs.push((line, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_as<T: std::str::FromStr>(
    line: usize,
    key: &str,
    value: &str,
    reason: &str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    })
}

const LOGICAL_COLUMNS: [&str; 17] = [
    "id", "timestamp", "label", "la", "ld", "lt", "ns", "nd", "nf", "entropy", "nuc", "ndev",
    "age", "exp", "rexp", "sexp", "fix",
];

/// Experiment settings a config file may carry. Every field is optional
/// so the CLI can distinguish "set in file" from "left at default".
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    pub window_months: Option<u32>,
    pub seed: Option<u64>,
    pub trees: Option<usize>,
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: Option<usize>,
    pub correlation_threshold: Option<f64>,
    pub min_class_count: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub mask_first_train_period: Option<bool>,
    pub delimiter: Option<u8>,
    /// `column.<logical> = <csv header>` schema overrides.
    pub columns: Vec<(String, String)>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig, ConfigError> {
        let mut cfg = FileConfig::default();
        for (line, key, value) in parse_pairs(text)? {
            match key.as_str() {
                "window_months" => {
                    cfg.window_months = Some(parse_as(line, &key, &value, "expected integer")?)
                }
                "seed" => cfg.seed = Some(parse_as(line, &key, &value, "expected integer")?),
                "trees" => cfg.trees = Some(parse_as(line, &key, &value, "expected integer")?),
                "mtry" => cfg.mtry = Some(parse_as(line, &key, &value, "expected integer")?),
                "max_depth" => {
                    cfg.max_depth = Some(parse_as(line, &key, &value, "expected integer")?)
                }
                "min_samples_split" => {
                    cfg.min_samples_split = Some(parse_as(line, &key, &value, "expected integer")?)
                }
                "correlation_threshold" => {
                    cfg.correlation_threshold =
                        Some(parse_as(line, &key, &value, "expected number")?)
                }
                "min_class_count" => {
                    cfg.min_class_count = Some(parse_as(line, &key, &value, "expected integer")?)
                }
                "out_dir" => cfg.out_dir = Some(PathBuf::from(&value)),
                "threads" => cfg.threads = Some(parse_as(line, &key, &value, "expected integer")?),
                "mask_first_train_period" => {
                    cfg.mask_first_train_period =
                        Some(parse_as(line, &key, &value, "expected true/false")?)
                }
                "delimiter" => {
                    let bytes = value.as_bytes();
                    if bytes.len() != 1 {
                        return Err(ConfigError::BadValue {
                            line,
                            key,
                            value,
                            reason: "expected a single character".to_string(),
                        });
                    }
                    cfg.delimiter = Some(bytes[0]);
                }
                _ => {
                    if let Some(logical) = key.strip_prefix("column.") {
                        if !LOGICAL_COLUMNS.contains(&logical) {
                            return Err(ConfigError::UnknownKey { line, key });
                        }
                        cfg.columns.push((logical.to_string(), value));
                    } else {
                        return Err(ConfigError::UnknownKey { line, key });
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn schema_map(&self) -> SchemaMap {
        let mut map = SchemaMap::default();
        for (logical, header) in &self.columns {
            map.set(logical, header);
        }
        map
    }
}

/// Synthetic-generation spec file, same `key = value` format. Keys:
/// `n_periods`, `rows_per_period`, `drift` (`stationary` or
/// `coefficient_drift`), `drift_rate`, `base_defect_rate`,
/// `noise_features`, `window_months`. Omitted keys take the defaults.
pub fn parse_synth_spec(text: &str) -> Result<SyntheticSpec, ConfigError> {
    let mut spec = SyntheticSpec::default();
    let mut drift_kind: Option<String> = None;
    let mut drift_rate: Option<f64> = None;
    let mut drift_line = 0;
    for (line, key, value) in parse_pairs(text)? {
        match key.as_str() {
            "n_periods" => spec.n_periods = parse_as(line, &key, &value, "expected integer")?,
            "rows_per_period" => {
                spec.rows_per_period = parse_as(line, &key, &value, "expected integer")?
            }
            "base_defect_rate" => {
                spec.base_defect_rate = parse_as(line, &key, &value, "expected number")?
            }
            "noise_features" => {
                spec.noise_features = parse_as(line, &key, &value, "expected integer")?
            }
            "window_months" => spec.window_months = parse_as(line, &key, &value, "expected integer")?,
            "drift" => {
                drift_kind = Some(value);
                drift_line = line;
            }
            "drift_rate" => drift_rate = Some(parse_as(line, &key, &value, "expected number")?),
            _ => return Err(ConfigError::UnknownKey { line, key }),
        }
    }
    spec.drift = match drift_kind.as_deref() {
        None | Some("stationary") => DriftKind::Stationary,
        Some("coefficient_drift") => DriftKind::CoefficientDrift {
            rate: drift_rate.unwrap_or(0.5),
        },
        Some(other) => {
            return Err(ConfigError::BadValue {
                line: drift_line,
                key: "drift".to_string(),
                value: other.to_string(),
                reason: "expected stationary or coefficient_drift".to_string(),
            })
        }
    };
    Ok(spec)
}
