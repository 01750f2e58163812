//! Seeded synthetic change datasets for desk-scale validation.
//!
//! Labels come from a logistic ground-truth process over the 14 metric
//! columns. A stationary spec keeps the coefficient vector fixed across
//! periods; a drifting spec rotates the dominant coefficient mass across
//! features from different metric families, so the most important family
//! migrates as periods advance.

use chrono::{Months, TimeZone, Utc};
use rand::Rng;

use crate::ingest::{ChangeRecord, Dataset};
use crate::seeding;

const SYNTH_STREAM: u64 = 0x73796e74;

/// Metric indexes ordered by how early they receive signal mass; the
/// first four sit in four different families (Size, Diffusion, History,
/// Experience) and serve as drift anchors.
const PRIORITY: [usize; 14] = [0, 6, 8, 10, 2, 3, 7, 11, 1, 4, 9, 12, 5, 13];
const ANCHORS: [usize; 4] = [0, 6, 8, 10]; // la, entropy, ndev, exp

/// Dominant coefficient mass carried by the (possibly rotating) anchor.
const ANCHOR_MASS: f64 = 1.6;
/// Minor weight for the k-th informative non-anchor feature.
fn minor_weight(k: usize) -> f64 {
    0.7 * 0.75f64.powi(k as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKind {
    Stationary,
    /// Anchor position advances by `rate` per period.
    CoefficientDrift { rate: f64 },
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_periods: usize,
    pub rows_per_period: usize,
    pub drift: DriftKind,
    pub base_defect_rate: f64,
    /// How many of the 14 metrics carry zero coefficient.
    pub noise_features: usize,
    /// Calendar window the timestamps are laid out for.
    pub window_months: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_periods: 8,
            rows_per_period: 1000,
            drift: DriftKind::Stationary,
            base_defect_rate: 0.15,
            noise_features: 6,
            window_months: 6,
        }
    }
}

/// Coefficient vector for one period (0-based index).
fn coefficients(spec: &SyntheticSpec, period: usize) -> [f64; 14] {
    let informative = 14 - spec.noise_features;
    let mut coeffs = [0.0f64; 14];
    let mut minor_rank = 0;
    for &f in PRIORITY.iter().take(informative) {
        if ANCHORS.contains(&f) {
            continue;
        }
        coeffs[f] = minor_weight(minor_rank);
        minor_rank += 1;
    }

    let live_anchors: Vec<usize> = ANCHORS
        .iter()
        .copied()
        .filter(|a| PRIORITY.iter().take(informative).any(|p| p == a))
        .collect();
    if live_anchors.is_empty() {
        return coeffs;
    }
    let rate = match spec.drift {
        DriftKind::Stationary => 0.0,
        DriftKind::CoefficientDrift { rate } => rate,
    };
    let pos = rate * period as f64;
    let idx = pos.floor() as usize % live_anchors.len();
    let frac = pos - pos.floor();
    coeffs[live_anchors[idx]] += ANCHOR_MASS * (1.0 - frac);
    coeffs[live_anchors[(idx + 1) % live_anchors.len()]] += ANCHOR_MASS * frac;
    coeffs
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept such that the period's mean defect probability hits the
/// target rate; monotone in the intercept, so bisection converges fast.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let mut lo = -30.0;
    let mut hi = 30.0;
    for _ in 0..80 {
        let mid = (lo + hi) / 2.0;
        let mean: f64 = scores.iter().map(|&s| sigmoid(mid + s)).sum::<f64>() / scores.len() as f64;
        if mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Dataset {
    assert!(spec.rows_per_period >= 50, "rows_per_period must be >= 50");
    assert!(spec.n_periods >= 1);
    assert!(spec.noise_features < 14);
    assert!(spec.base_defect_rate > 0.0 && spec.base_defect_rate < 1.0);

    let base = Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap();
    let mut records = Vec::with_capacity(spec.n_periods * spec.rows_per_period);

    for p in 0..spec.n_periods {
        let coeffs = coefficients(spec, p);
        let start = base
            .checked_add_months(Months::new(spec.window_months * p as u32))
            .unwrap()
            .timestamp();
        let end = base
            .checked_add_months(Months::new(spec.window_months * (p as u32 + 1)))
            .unwrap()
            .timestamp();
        let span = end - start;

        let mut rng = seeding::rng(seed, &[SYNTH_STREAM, p as u64]);
        let mut rows: Vec<([f64; 14], f64)> = Vec::with_capacity(spec.rows_per_period);
        for _ in 0..spec.rows_per_period {
            let mut metrics = [0.0f64; 14];
            let mut score = 0.0;
            for (f, slot) in metrics.iter_mut().enumerate() {
                let (value, z) = if f == 13 {
                    // fix flag: Bernoulli(0.3), standardized
                    let v = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
                    (v, (v - 0.3) / 0.21f64.sqrt())
                } else {
                    let u = normal(&mut rng);
                    // lognormal keeps the schema's nonnegativity invariant
                    ((0.5 * u).exp(), u)
                };
                *slot = value;
                score += coeffs[f] * z;
            }
            rows.push((metrics, score));
        }

        let scores: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let intercept = calibrate_intercept(&scores, spec.base_defect_rate);

        for (k, (metrics, score)) in rows.into_iter().enumerate() {
            let label = rng.random::<f64>() < sigmoid(intercept + score);
            // strictly increasing timestamps within [start, end)
            let ts = start + (k as i64 * span) / spec.rows_per_period as i64;
            records.push(ChangeRecord {
                id: format!("synth-{p:03}-{k:06}"),
                timestamp: ts,
                metrics,
                label,
            });
        }
    }

    Dataset {
        name: "synthetic".to_string(),
        records,
    }
}

/// Write a synthetic dataset in the default CSV schema.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::from(
        "commit_id,commit_ts,la,ld,lt,ns,nd,nf,entropy,nuc,ndev,age,exp,rexp,sexp,fix,bug\n",
    );
    for r in &ds.records {
        out.push_str(&r.id);
        out.push(',');
        out.push_str(&r.timestamp.to_string());
        for v in r.metrics {
            out.push(',');
            out.push_str(&format!("{v:.17e}"));
        }
        out.push(',');
        out.push_str(if r.label { "1" } else { "0" });
        out.push('\n');
    }
    out
}
