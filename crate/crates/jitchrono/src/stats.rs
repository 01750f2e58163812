//! Nonparametric hypothesis tests.

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::preprocess::average_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    ExactEnumeration,
    NormalApprox,
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Alternative {
    /// a tends to exceed b.
    AGreater,
    /// b tends to exceed a.
    BGreater,
    /// Omnibus (any group differs).
    Omnibus,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: Method,
    pub alternative: Alternative,
    pub warning: Option<String>,
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution: Q(df/2, x/2).
pub fn chisq_upper_tail(x: f64, df: usize) -> f64 {
    assert!(df >= 1, "df must be >= 1");
    assert!(x >= 0.0, "x must be nonnegative");
    if x == 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Above this effective sample size the normal approximation is used.
pub const WILCOXON_EXACT_CUTOFF: usize = 20;

/// Signed ranks of the nonzero differences a - b.
/// Returns (w_plus, doubled ranks of |d|, tie-group sizes).
fn signed_rank_parts(diffs: &[f64]) -> (f64, Vec<u64>, Vec<usize>) {
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(diffs)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();
    // average ranks are multiples of 1/2; doubled they are exact integers
    let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
    let mut sorted = abs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (w_plus, doubled, tie_sizes)
}

/// Exact null distribution of the doubled positive-rank sum: counts of
/// sign assignments achieving each doubled sum, by subset-sum DP.
fn exact_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (r..counts.len()).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

fn exact_p(w_plus: f64, doubled_ranks: &[u64], alternative: Alternative) -> f64 {
    let counts = exact_counts(doubled_ranks);
    let n_assignments = 2f64.powi(doubled_ranks.len() as i32);
    let w2 = (w_plus * 2.0).round() as usize;
    let tail: f64 = match alternative {
        Alternative::AGreater => counts[w2..].iter().sum(),
        Alternative::BGreater => counts[..=w2].iter().sum(),
        Alternative::Omnibus => unreachable!("omnibus is not a Wilcoxon alternative"),
    };
    tail / n_assignments
}

fn approx_p(w_plus: f64, n: usize, tie_sizes: &[usize], alternative: Alternative) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    match alternative {
        Alternative::AGreater => 1.0 - normal_cdf((w_plus - 0.5 - mean) / sd),
        Alternative::BGreater => normal_cdf((w_plus + 0.5 - mean) / sd),
        Alternative::Omnibus => unreachable!("omnibus is not a Wilcoxon alternative"),
    }
}

/// One-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. Exact tail enumeration up to
/// [`WILCOXON_EXACT_CUTOFF`] effective pairs, then a normal approximation
/// with tie-corrected variance and 0.5 continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> TestResult {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    assert!(!a.is_empty());
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: Method::ExactEnumeration,
            alternative,
            warning: Some("all differences are zero; test undefined".into()),
        };
    }
    let method = if n <= WILCOXON_EXACT_CUTOFF {
        Method::ExactEnumeration
    } else {
        Method::NormalApprox
    };
    wilcoxon_with_method(&diffs, alternative, method)
}

/// As [`wilcoxon_signed_rank`] but with the p-value method forced.
/// Differences must already be nonzero.
pub fn wilcoxon_with_method(
    diffs: &[f64],
    alternative: Alternative,
    method: Method,
) -> TestResult {
    let n = diffs.len();
    let (w_plus, doubled, tie_sizes) = signed_rank_parts(diffs);
    let p_value = match method {
        Method::ExactEnumeration => exact_p(w_plus, &doubled, alternative),
        Method::NormalApprox => approx_p(w_plus, n, &tie_sizes, alternative),
        Method::ChiSquare => panic!("chi-square is not a Wilcoxon method"),
    };
    TestResult {
        statistic: w_plus,
        p_value: p_value.clamp(0.0, 1.0),
        n_effective: n,
        method,
        alternative,
        warning: None,
    }
}

/// Kruskal-Wallis omnibus test with tie correction; p-value from the
/// chi-square limit with k - 1 degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> TestResult {
    assert!(groups.len() >= 2, "need at least two groups");
    assert!(groups.iter().all(|g| !g.is_empty()), "groups must be non-empty");
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    assert!(n >= 3, "need at least three observations in total");
    let df = groups.len() - 1;

    if pooled.windows(2).all(|w| w[0] == w[1]) {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: n,
            method: Method::ChiSquare,
            alternative: Alternative::Omnibus,
            warning: Some("all pooled values identical; no rank separation".into()),
        };
    }

    let ranks = average_ranks(&pooled);
    let nf = n as f64;
    let mut h = 0.0;
    let mut offset = 0;
    for g in groups {
        let r_sum: f64 = ranks[offset..offset + g.len()].iter().sum();
        h += r_sum * r_sum / g.len() as f64;
        offset += g.len();
    }
    h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);

    // tie correction over pooled values
    let mut sorted = pooled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_term / (nf * nf * nf - nf);
    h /= correction;
    let h = h.max(0.0);

    TestResult {
        statistic: h,
        p_value: chisq_upper_tail(h, df),
        n_effective: n,
        method: Method::ChiSquare,
        alternative: Alternative::Omnibus,
        warning: None,
    }
}
