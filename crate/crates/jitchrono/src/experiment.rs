//! Experiment orchestration: strategy training sets per period pair,
//! performance matrices, family importance series, and the statistical
//! comparisons between training strategies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::forest::{
    importance_type1, importance_type2, train_forest, ForestConfig, ForestError, ImportanceKind,
    ImportanceVector,
};
use crate::ingest::PeriodizedDataset;
use crate::metrics::{auc, brier, MetricsError, PredictionSet};
use crate::preprocess::{correlation_filter, undersample, FeatureMatrix, FilterReport, PreprocessError};
use crate::seeding;
use crate::stats::{kruskal_wallis, wilcoxon_signed_rank, Alternative, TestResult};

const CELL_STREAM: u64 = 0x63656c6c;
const FILTER_STREAM: u64 = 1;
const UNDER_STREAM: u64 = 2;
const FOREST_STREAM: u64 = 3;
const WEIGHTED_STREAM: u64 = 4;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("insufficient class: training set for period {period} has {count} {class} examples, need {min}")]
    InsufficientClass {
        period: usize,
        class: &'static str,
        count: usize,
        min: usize,
    },
    #[error("invalid period index {index}: must be in 1..{max} (a later test period must exist)")]
    InvalidPeriod { index: usize, max: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Strategy {
    Spm,
    Lpm,
    Weighted,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Spm => "SPM",
            Strategy::Lpm => "LPM",
            Strategy::Weighted => "Weighted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    Auc,
    Brier,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Brier => "Brier",
        }
    }
}

/// Lower-triangular train-period x test-period grid of metric values;
/// cells exist only for j > i.
#[derive(Debug, Clone, Serialize)]
pub struct PerformanceMatrix {
    pub metric: Metric,
    pub strategy: Strategy,
    pub n_periods: usize,
    #[serde(serialize_with = "serialize_cells")]
    cells: BTreeMap<(usize, usize), f64>,
}

fn serialize_cells<S: serde::Serializer>(
    cells: &BTreeMap<(usize, usize), f64>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Cell {
        train: usize,
        test: usize,
        value: f64,
    }
    serializer.collect_seq(cells.iter().map(|(&(train, test), &value)| Cell {
        train,
        test,
        value,
    }))
}

impl PerformanceMatrix {
    pub fn new(metric: Metric, strategy: Strategy, n_periods: usize) -> Self {
        PerformanceMatrix {
            metric,
            strategy,
            n_periods,
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, train: usize, test: usize, value: f64) {
        assert!(test > train, "cells exist only for test > train");
        assert!(train >= 1 && test <= self.n_periods);
        self.cells.insert((train, test), value);
    }

    pub fn get(&self, train: usize, test: usize) -> Option<f64> {
        self.cells.get(&(train, test)).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(usize, usize), &f64)> {
        self.cells.iter()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Values in the test-period column, keyed by training period.
    pub fn column(&self, test: usize) -> BTreeMap<usize, f64> {
        self.cells
            .iter()
            .filter(|((_, j), _)| *j == test)
            .map(|((i, _), v)| (*i, *v))
            .collect()
    }

    /// Paired values over cells defined in both matrices.
    pub fn paired_with(&self, other: &PerformanceMatrix) -> (Vec<f64>, Vec<f64>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (key, v) in &self.cells {
            if let Some(w) = other.cells.get(key) {
                a.push(*v);
                b.push(*w);
            }
        }
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Horizon {
    Short,
    Long,
}

/// Per-test-period, per-family normalized importance scores.
#[derive(Debug, Clone, Serialize)]
pub struct ImportanceSeries {
    pub kind: ImportanceKind,
    pub horizon: Horizon,
    /// test period -> family -> normalized score (columns sum to 1).
    pub points: BTreeMap<usize, BTreeMap<String, f64>>,
}

/// Feature -> family grouping of the 14 change metrics.
#[derive(Debug, Clone)]
pub struct FamilyMap {
    map: BTreeMap<String, String>,
}

pub const FAMILY_NAMES: [&str; 5] = ["Size", "Diffusion", "History", "Experience", "Purpose"];

impl Default for FamilyMap {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        for (family, members) in [
            ("Size", &["la", "ld", "lt"][..]),
            ("Diffusion", &["ns", "nd", "nf", "entropy"][..]),
            ("History", &["nuc", "ndev", "age"][..]),
            ("Experience", &["exp", "rexp", "sexp"][..]),
            ("Purpose", &["fix"][..]),
        ] {
            for m in members {
                map.insert(m.to_string(), family.to_string());
            }
        }
        FamilyMap { map }
    }
}

impl FamilyMap {
    pub fn family_of(&self, feature: &str) -> Option<&str> {
        self.map.get(feature).map(|s| s.as_str())
    }

    pub fn families(&self) -> Vec<String> {
        let mut fams: Vec<String> = self.map.values().cloned().collect();
        fams.sort();
        fams.dedup();
        fams
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub window_months: u32,
    pub forest: ForestConfig,
    pub correlation_threshold: f64,
    pub master_seed: u64,
    /// Both classes must reach this count in every training set.
    pub min_class_count: usize,
    /// Test periods for the weighted strategy; None = last period only.
    pub weighted_test_periods: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            window_months: 6,
            forest: ForestConfig::default(),
            correlation_threshold: 0.7,
            master_seed: 0,
            min_class_count: 5,
            weighted_test_periods: None,
        }
    }
}

fn check_period_index(pd: &PeriodizedDataset, i: usize) -> Result<(), ExperimentError> {
    if i < 1 || i >= pd.n_periods() {
        return Err(ExperimentError::InvalidPeriod {
            index: i,
            max: pd.n_periods(),
        });
    }
    Ok(())
}

fn check_class_guard(
    m: &FeatureMatrix,
    period: usize,
    min: usize,
) -> Result<(), ExperimentError> {
    let pos = m.labels.iter().filter(|&&l| l).count();
    let neg = m.n_rows() - pos;
    if pos < min {
        return Err(ExperimentError::InsufficientClass {
            period,
            class: "positive",
            count: pos,
            min,
        });
    }
    if neg < min {
        return Err(ExperimentError::InsufficientClass {
            period,
            class: "negative",
            count: neg,
            min,
        });
    }
    Ok(())
}

/// Short-period training set: period i's records only.
pub fn build_spm_training(
    pd: &PeriodizedDataset,
    i: usize,
    min_class_count: usize,
) -> Result<FeatureMatrix, ExperimentError> {
    check_period_index(pd, i)?;
    let m = FeatureMatrix::from_records(pd.period(i).records.iter());
    check_class_guard(&m, i, min_class_count)?;
    Ok(m)
}

/// Long-period training set: periods 1..=i concatenated.
pub fn build_lpm_training(
    pd: &PeriodizedDataset,
    i: usize,
    min_class_count: usize,
) -> Result<FeatureMatrix, ExperimentError> {
    check_period_index(pd, i)?;
    let records = pd.periods[..i].iter().flat_map(|p| p.records.iter());
    let m = FeatureMatrix::from_records(records);
    check_class_guard(&m, i, min_class_count)?;
    Ok(m)
}

/// Recency-weighted training set: from each period k in 1..=i, a seeded
/// simple random sample (without replacement) of ceil(k/i * |period k|)
/// rows. Period i always contributes all of its rows.
pub fn build_weighted_training(
    pd: &PeriodizedDataset,
    i: usize,
    seed: u64,
    min_class_count: usize,
) -> Result<FeatureMatrix, ExperimentError> {
    check_period_index(pd, i)?;
    let mut rows = Vec::new();
    for k in 1..=i {
        let period = pd.period(k);
        let n = period.records.len();
        let fraction = k as f64 / i as f64;
        let take = (fraction * n as f64).ceil() as usize;
        let take = take.min(n);
        if take == 0 {
            continue;
        }
        let mut rng = seeding::rng(seed, &[WEIGHTED_STREAM, k as u64]);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, take).into_vec();
        picked.sort_unstable();
        rows.extend(picked.into_iter().map(|r| &period.records[r]));
    }
    let m = FeatureMatrix::from_records(rows);
    check_class_guard(&m, i, min_class_count)?;
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub auc: f64,
    pub brier: f64,
    pub importance_type1: Option<ImportanceVector>,
    pub importance_type2: ImportanceVector,
    pub filter: FilterReport,
}

/// Full per-cell pipeline: correlation filter fit on the training split,
/// undersampling, forest training, scoring of the test rows.
pub fn evaluate_cell(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    config: &ExperimentConfig,
    cell_seed: u64,
) -> Result<CellOutcome, ExperimentError> {
    let filter = correlation_filter(
        train,
        config.correlation_threshold,
        seeding::derive(cell_seed, &[FILTER_STREAM]),
    );
    let train_f = train.select_features(&filter.retained);
    let test_f = test.select_features(&filter.retained);

    let balanced = undersample(&train_f, seeding::derive(cell_seed, &[UNDER_STREAM]))?;

    let forest_config = ForestConfig {
        seed: seeding::derive(cell_seed, &[FOREST_STREAM]),
        ..config.forest.clone()
    };
    let forest = train_forest(&balanced, &forest_config)?;

    let scores = forest.predict_proba_all(&test_f)?;
    let predictions = PredictionSet::new(scores, test_f.labels.clone());
    let auc_value = auc(&predictions)?;
    let brier_value = brier(&predictions);

    let imp1 = importance_type1(&forest, &balanced).ok();
    let imp2 = importance_type2(&forest);

    Ok(CellOutcome {
        auc: auc_value,
        brier: brier_value,
        importance_type1: imp1,
        importance_type2: imp2,
        filter,
    })
}

/// Seed for the (train, test) cell. Shared across strategies so paired
/// comparisons see the same sampling and the i = 1 training-set
/// coincidence carries through to identical cell values.
pub fn cell_seed(master_seed: u64, train: usize, test: usize) -> u64 {
    seeding::derive(master_seed, &[CELL_STREAM, train as u64, test as u64])
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub strategy: Strategy,
    pub train: usize,
    pub test: usize,
    pub reason: String,
}

#[derive(Debug, Serialize)]
pub struct Rq1Result {
    pub spm_auc: PerformanceMatrix,
    pub spm_brier: PerformanceMatrix,
    pub lpm_auc: PerformanceMatrix,
    pub lpm_brier: PerformanceMatrix,
    pub failures: Vec<CellFailure>,
}

fn build_training(
    pd: &PeriodizedDataset,
    strategy: Strategy,
    i: usize,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<FeatureMatrix, ExperimentError> {
    match strategy {
        Strategy::Spm => build_spm_training(pd, i, config.min_class_count),
        Strategy::Lpm => build_lpm_training(pd, i, config.min_class_count),
        Strategy::Weighted => build_weighted_training(pd, i, seed, config.min_class_count),
    }
}

type CellJobResult = (Strategy, usize, usize, Result<CellOutcome, ExperimentError>);

fn run_cells(
    pd: &PeriodizedDataset,
    strategies: &[Strategy],
    pairs: &[(usize, usize)],
    config: &ExperimentConfig,
) -> Vec<CellJobResult> {
    let jobs: Vec<(Strategy, usize, usize)> = strategies
        .iter()
        .flat_map(|&s| pairs.iter().map(move |&(i, j)| (s, i, j)))
        .collect();
    jobs.into_par_iter()
        .map(|(strategy, i, j)| {
            let seed = cell_seed(config.master_seed, i, j);
            let outcome = build_training(pd, strategy, i, config, seed).and_then(|train| {
                let test = FeatureMatrix::from_records(pd.period(j).records.iter());
                evaluate_cell(&train, &test, config, seed)
            });
            (strategy, i, j, outcome)
        })
        .collect()
}

/// Fill the SPM and LPM performance matrices over every (i, j), j > i.
pub fn run_rq1(pd: &PeriodizedDataset, config: &ExperimentConfig) -> Rq1Result {
    let n = pd.n_periods();
    let pairs: Vec<(usize, usize)> = (1..n)
        .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
        .collect();
    let results = run_cells(pd, &[Strategy::Spm, Strategy::Lpm], &pairs, config);

    let mut out = Rq1Result {
        spm_auc: PerformanceMatrix::new(Metric::Auc, Strategy::Spm, n),
        spm_brier: PerformanceMatrix::new(Metric::Brier, Strategy::Spm, n),
        lpm_auc: PerformanceMatrix::new(Metric::Auc, Strategy::Lpm, n),
        lpm_brier: PerformanceMatrix::new(Metric::Brier, Strategy::Lpm, n),
        failures: Vec::new(),
    };
    for (strategy, i, j, result) in results {
        match result {
            Ok(cell) => {
                let (auc_m, brier_m) = match strategy {
                    Strategy::Spm => (&mut out.spm_auc, &mut out.spm_brier),
                    Strategy::Lpm => (&mut out.lpm_auc, &mut out.lpm_brier),
                    Strategy::Weighted => unreachable!(),
                };
                auc_m.insert(i, j, cell.auc);
                brier_m.insert(i, j, cell.brier);
            }
            Err(e) => out.failures.push(CellFailure {
                strategy,
                train: i,
                test: j,
                reason: e.to_string(),
            }),
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct WeightedResult {
    pub auc: PerformanceMatrix,
    pub brier: PerformanceMatrix,
    pub failures: Vec<CellFailure>,
}

/// Weighted-strategy cells for the configured test periods
/// (default: the final period only), over all valid training periods.
pub fn run_weighted(pd: &PeriodizedDataset, config: &ExperimentConfig) -> WeightedResult {
    let n = pd.n_periods();
    let test_periods = config
        .weighted_test_periods
        .clone()
        .unwrap_or_else(|| vec![n]);
    let pairs: Vec<(usize, usize)> = test_periods
        .iter()
        .flat_map(|&j| (1..j).map(move |i| (i, j)))
        .collect();
    let results = run_cells(pd, &[Strategy::Weighted], &pairs, config);

    let mut out = WeightedResult {
        auc: PerformanceMatrix::new(Metric::Auc, Strategy::Weighted, n),
        brier: PerformanceMatrix::new(Metric::Brier, Strategy::Weighted, n),
        failures: Vec::new(),
    };
    for (_, i, j, result) in results {
        match result {
            Ok(cell) => {
                out.auc.insert(i, j, cell.auc);
                out.brier.insert(i, j, cell.brier);
            }
            Err(e) => out.failures.push(CellFailure {
                strategy: Strategy::Weighted,
                train: i,
                test: j,
                reason: e.to_string(),
            }),
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct Rq2Result {
    pub series: Vec<ImportanceSeries>,
    pub warnings: Vec<String>,
}

/// Family scores from one importance vector: negatives clamped to zero,
/// then normalized to sum 1. All-zero columns fall back to uniform.
fn family_scores(
    imp: &ImportanceVector,
    fm: &FamilyMap,
    warnings: &mut Vec<String>,
    context: &str,
) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, f64> = fm
        .families()
        .into_iter()
        .map(|f| (f, 0.0))
        .collect();
    for (feature, &score) in &imp.scores {
        if let Some(family) = fm.family_of(feature) {
            *sums.get_mut(family).unwrap() += score.max(0.0);
        }
    }
    let total: f64 = sums.values().sum();
    if total <= 0.0 {
        warnings.push(format!(
            "{context}: all clamped family scores are zero; emitting uniform weights"
        ));
        let uniform = 1.0 / sums.len() as f64;
        for v in sums.values_mut() {
            *v = uniform;
        }
    } else {
        for v in sums.values_mut() {
            *v /= total;
        }
    }
    sums
}

/// Per-test-period family importance for the short (i = j-1) and long
/// (1..=j-1) training windows, both importance kinds.
pub fn run_rq2(pd: &PeriodizedDataset, config: &ExperimentConfig, fm: &FamilyMap) -> Rq2Result {
    let n = pd.n_periods();
    let jobs: Vec<(Horizon, usize)> = [Horizon::Short, Horizon::Long]
        .into_iter()
        .flat_map(|h| (2..=n).map(move |j| (h, j)))
        .collect();

    let results: Vec<(Horizon, usize, Result<CellOutcome, ExperimentError>)> = jobs
        .into_par_iter()
        .map(|(horizon, j)| {
            let i = j - 1;
            let seed = cell_seed(config.master_seed, i, j);
            let strategy = match horizon {
                Horizon::Short => Strategy::Spm,
                Horizon::Long => Strategy::Lpm,
            };
            let outcome = build_training(pd, strategy, i, config, seed).and_then(|train| {
                let test = FeatureMatrix::from_records(pd.period(j).records.iter());
                evaluate_cell(&train, &test, config, seed)
            });
            (horizon, j, outcome)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut series: Vec<ImportanceSeries> = [Horizon::Short, Horizon::Long]
        .into_iter()
        .flat_map(|h| {
            [ImportanceKind::TypeI, ImportanceKind::TypeII]
                .into_iter()
                .map(move |k| ImportanceSeries {
                    kind: k,
                    horizon: h,
                    points: BTreeMap::new(),
                })
        })
        .collect();

    for (horizon, j, result) in results {
        match result {
            Ok(cell) => {
                for s in series.iter_mut().filter(|s| s.horizon == horizon) {
                    let imp = match s.kind {
                        ImportanceKind::TypeI => match &cell.importance_type1 {
                            Some(v) => v,
                            None => {
                                warnings.push(format!(
                                    "{horizon:?} test period {j}: no out-of-bag rows; Type I point skipped"
                                ));
                                continue;
                            }
                        },
                        ImportanceKind::TypeII => &cell.importance_type2,
                    };
                    let context = format!("{:?}/{:?} test period {j}", s.horizon, s.kind);
                    let scores = family_scores(imp, fm, &mut warnings, &context);
                    s.points.insert(j, scores);
                }
            }
            Err(e) => warnings.push(format!("{horizon:?} test period {j}: {e}")),
        }
    }

    Rq2Result { series, warnings }
}

#[derive(Debug, Serialize)]
pub struct WsrtSummary {
    pub metric: Metric,
    pub result: TestResult,
    pub median_spm: f64,
    pub median_lpm: f64,
    pub n_pairs: usize,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// One-sided signed-rank comparison of LPM against SPM over their common
/// cells: alternative "LPM greater" for AUC, "LPM smaller" for Brier.
pub fn run_rq3_wsrt(spm: &PerformanceMatrix, lpm: &PerformanceMatrix) -> WsrtSummary {
    assert_eq!(spm.metric, lpm.metric);
    let (lpm_values, spm_values) = lpm.paired_with(spm);
    let alternative = match spm.metric {
        Metric::Auc => Alternative::AGreater,
        Metric::Brier => Alternative::BGreater,
    };
    let result = wilcoxon_signed_rank(&lpm_values, &spm_values, alternative);
    WsrtSummary {
        metric: spm.metric,
        result,
        median_spm: median(&spm_values),
        median_lpm: median(&lpm_values),
        n_pairs: lpm_values.len(),
    }
}

#[derive(Debug, Serialize)]
pub struct KwSummary {
    pub metric: Metric,
    pub test_period: usize,
    pub result: TestResult,
    /// Strategy label -> per-training-period values (for plotting).
    pub groups: BTreeMap<String, Vec<f64>>,
}

/// Kruskal-Wallis over the three strategies' values in the final test
/// column: training periods i = 1..n-1 present for all three.
pub fn run_rq3_kw(
    spm: &PerformanceMatrix,
    lpm: &PerformanceMatrix,
    weighted: &PerformanceMatrix,
    test_period: usize,
) -> KwSummary {
    assert_eq!(spm.metric, lpm.metric);
    assert_eq!(spm.metric, weighted.metric);
    let spm_col = spm.column(test_period);
    let lpm_col = lpm.column(test_period);
    let w_col = weighted.column(test_period);
    let common: Vec<usize> = spm_col
        .keys()
        .filter(|i| lpm_col.contains_key(i) && w_col.contains_key(i))
        .copied()
        .collect();

    let pick = |col: &BTreeMap<usize, f64>| common.iter().map(|i| col[i]).collect::<Vec<f64>>();
    let groups_vec = vec![pick(&spm_col), pick(&lpm_col), pick(&w_col)];
    let result = kruskal_wallis(&groups_vec);

    let mut groups = BTreeMap::new();
    for (strategy, values) in [Strategy::Spm, Strategy::Lpm, Strategy::Weighted]
        .iter()
        .zip(groups_vec)
    {
        groups.insert(strategy.label().to_string(), values);
    }
    KwSummary {
        metric: spm.metric,
        test_period,
        result,
        groups,
    }
}
