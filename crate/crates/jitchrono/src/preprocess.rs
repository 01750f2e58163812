//! Feature de-correlation and class balancing.
//!
//! The filter is fit on the training split only; the retained feature set
//! is then applied to the test split so no test information leaks into
//! feature selection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::{ChangeRecord, METRIC_NAMES};
use crate::seeding;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("degenerate input: sequence {0:?} is constant, correlation undefined")]
    DegenerateInput(String),
    #[error("single class: both a positive and a negative example are required")]
    SingleClass,
}

/// Tabular view of change records: n rows, p features, binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    values: Vec<f64>, // row-major, n * p
    pub labels: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, values: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(values.len(), feature_names.len() * labels.len());
        FeatureMatrix {
            feature_names,
            values,
            labels,
        }
    }

    /// Build from records using the canonical 14-metric feature order.
    pub fn from_records<'a, I: IntoIterator<Item = &'a ChangeRecord>>(records: I) -> Self {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for r in records {
            values.extend_from_slice(&r.metrics);
            labels.push(r.label);
        }
        FeatureMatrix {
            feature_names: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
            values,
            labels,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.value(i, feature)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// New matrix keeping only the named features, in their current order.
    pub fn select_features(&self, keep: &[String]) -> FeatureMatrix {
        let indices: Vec<usize> = self
            .feature_names
            .iter()
            .enumerate()
            .filter(|(_, n)| keep.contains(n))
            .map(|(i, _)| i)
            .collect();
        let names = indices
            .iter()
            .map(|&i| self.feature_names[i].clone())
            .collect();
        let mut values = Vec::with_capacity(indices.len() * self.n_rows());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            values.extend(indices.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            feature_names: names,
            values,
            labels: self.labels.clone(),
        }
    }

    /// New matrix with the given subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.n_features();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            values,
            labels,
        }
    }
}

/// Average ranks (1-based); ties share the mean of their rank positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j share rank mean
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// Tie-robust; reduces to 1 - 6*sum(d^2)/(n(n^2-1)) for tie-free input.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, PreprocessError> {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two observations");
    if is_constant(x) {
        return Err(PreprocessError::DegenerateInput("x".into()));
    }
    if is_constant(y) {
        return Err(PreprocessError::DegenerateInput("y".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DroppedFeature {
    pub dropped: String,
    pub kept: String,
    pub rho: f64,
}

/// Outcome of the correlation filter.
#[derive(Debug, Clone, Serialize)]
pub struct FilterReport {
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedFeature>,
    /// Constant features removed before correlation (rho undefined).
    pub constant_dropped: Vec<String>,
    pub threshold: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Drop one member of every feature pair with |rho| >= threshold.
///
/// Pairs are visited in lexicographic name order; when both members are
/// still retained, a seeded coin picks which one to drop. Constant
/// features are removed up front with a warning.
pub fn correlation_filter(m: &FeatureMatrix, threshold: f64, seed: u64) -> FilterReport {
    assert!(threshold > 0.0 && threshold <= 1.0);
    let mut warnings = Vec::new();
    let mut constant_dropped = Vec::new();

    let mut retained: Vec<String> = Vec::new();
    for (i, name) in m.feature_names.iter().enumerate() {
        if is_constant(&m.column(i)) {
            warnings.push(format!("feature {name} is constant; dropped before filtering"));
            constant_dropped.push(name.clone());
        } else {
            retained.push(name.clone());
        }
    }

    // pairs in lexicographic (a, b) order, a < b
    let mut sorted = retained.clone();
    sorted.sort();
    let mut rng = seeding::rng(seed, &[0x66696c74]);
    let mut dropped = Vec::new();
    for a_pos in 0..sorted.len() {
        for b_pos in a_pos + 1..sorted.len() {
            let a = &sorted[a_pos];
            let b = &sorted[b_pos];
            if !retained.contains(a) || !retained.contains(b) {
                continue;
            }
            let ca = m.column(m.feature_index(a).unwrap());
            let cb = m.column(m.feature_index(b).unwrap());
            let rho = match spearman(&ca, &cb) {
                Ok(r) => r,
                Err(e) => {
                    warnings.push(format!("pair ({a}, {b}): {e}; treated as rho = 0"));
                    0.0
                }
            };
            if rho.abs() >= threshold {
                let (out, kept) = if rng.random_bool(0.5) {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                };
                retained.retain(|n| n != &out);
                dropped.push(DroppedFeature {
                    dropped: out,
                    kept,
                    rho,
                });
            }
        }
    }

    FilterReport {
        retained,
        dropped,
        constant_dropped,
        threshold,
        seed,
        warnings,
    }
}

/// Balance classes 1:1 by sampling the majority class without replacement
/// down to the minority count. Row order is shuffled deterministically.
pub fn undersample(m: &FeatureMatrix, seed: u64) -> Result<FeatureMatrix, PreprocessError> {
    let pos: Vec<usize> = (0..m.n_rows()).filter(|&i| m.labels[i]).collect();
    let neg: Vec<usize> = (0..m.n_rows()).filter(|&i| !m.labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(PreprocessError::SingleClass);
    }
    let (minority, majority) = if pos.len() <= neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = seeding::rng(seed, &[0x756e6473]);
    let mut majority = majority;
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());

    let mut rows: Vec<usize> = minority.into_iter().chain(majority).collect();
    rows.shuffle(&mut rng);
    Ok(m.select_rows(&rows))
}
