//! Report emission: CSV matrices, SVG charts, and the run manifest.
//!
//! CSV is the authoritative output; every SVG is rendered purely from
//! data that is also emitted as CSV or JSON, so charts can be
//! regenerated offline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::experiment::{ImportanceSeries, Metric, PerformanceMatrix, Strategy};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse matrix CSV: {0}")]
    Parse(String),
}

fn write_file(path: &Path, content: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Matrix CSV: header row of test periods, one row per training period,
/// empty cells blank (distinguishable from 0.0). Values use the shortest
/// round-trip float formatting.
pub fn matrix_to_csv(m: &PerformanceMatrix) -> String {
    let n = m.n_periods;
    let mut out = String::from("train\\test");
    for j in 1..=n {
        write!(out, ",{j}").unwrap();
    }
    out.push('\n');
    for i in 1..=n {
        write!(out, "{i}").unwrap();
        for j in 1..=n {
            out.push(',');
            if j > i {
                if let Some(v) = m.get(i, j) {
                    write!(out, "{v}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn emit_matrix_csv(m: &PerformanceMatrix, path: &Path) -> Result<(), ReportError> {
    write_file(path, &matrix_to_csv(m))
}

/// Inverse of [`matrix_to_csv`].
pub fn parse_matrix_csv(
    content: &str,
    metric: Metric,
    strategy: Strategy,
) -> Result<PerformanceMatrix, ReportError> {
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| ReportError::Parse("empty input".into()))?;
    let n = header.split(',').count() - 1;
    let mut m = PerformanceMatrix::new(metric, strategy, n);
    for line in lines {
        let mut fields = line.split(',');
        let i: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| ReportError::Parse(format!("bad row label in {line:?}")))?;
        for (j, field) in fields.enumerate() {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| ReportError::Parse(format!("bad value {field:?}")))?;
            m.insert(i, j + 1, v);
        }
    }
    Ok(m)
}

/// Color ramp for heatmap cells, normalized within the matrix's value
/// range. AUC: white (low) to red (high is good). Brier: white (high)
/// to blue (low is good). A constant matrix renders mid-ramp.
fn cell_color(metric: Metric, value: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo {
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    match metric {
        Metric::Auc => {
            let other = (255.0 * (1.0 - 0.75 * t)).round() as u8;
            format!("rgb(255,{other},{other})")
        }
        Metric::Brier => {
            let other = (255.0 * (0.25 + 0.75 * t)).round() as u8;
            format!("rgb({other},{other},255)")
        }
    }
}

const CELL: f64 = 44.0;
const MARGIN: f64 = 50.0;

/// Self-contained SVG heatmap with numeric labels in each filled cell.
pub fn heatmap_svg(m: &PerformanceMatrix) -> String {
    let n = m.n_periods;
    let width = MARGIN + n as f64 * CELL + 20.0;
    let height = MARGIN + n as f64 * CELL + 30.0;
    let values: Vec<f64> = m.cells().map(|(_, &v)| v).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    writeln!(
        svg,
        "<text x=\"{}\" y=\"14\" text-anchor=\"middle\" font-size=\"12\">{} ({})</text>",
        width / 2.0,
        m.metric.label(),
        m.strategy.label()
    )
    .unwrap();
    for j in 1..=n {
        let x = MARGIN + (j as f64 - 0.5) * CELL;
        writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{j}</text>",
            MARGIN - 6.0
        )
        .unwrap();
    }
    for i in 1..=n {
        let y = MARGIN + (i as f64 - 0.5) * CELL + 3.0;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{i}</text>",
            MARGIN - 8.0
        )
        .unwrap();
    }
    for i in 1..=n {
        for j in 1..=n {
            let x = MARGIN + (j - 1) as f64 * CELL;
            let y = MARGIN + (i - 1) as f64 * CELL;
            match m.get(i, j) {
                Some(v) => {
                    let color = cell_color(m.metric, v, lo, hi);
                    writeln!(
                        svg,
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"{color}\" stroke=\"#999\"/>"
                    )
                    .unwrap();
                    writeln!(
                        svg,
                        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.2}</text>",
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 3.0
                    )
                    .unwrap();
                }
                None => {
                    writeln!(
                        svg,
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"#f4f4f4\" stroke=\"#ccc\"/>"
                    )
                    .unwrap();
                }
            }
        }
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Testing period</text>",
        MARGIN + n as f64 * CELL / 2.0,
        height - 8.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_heatmap_svg(m: &PerformanceMatrix, path: &Path) -> Result<(), ReportError> {
    write_file(path, &heatmap_svg(m))
}

const FAMILY_COLORS: [(&str, &str); 5] = [
    ("Size", "#d62728"),
    ("Diffusion", "#1f77b4"),
    ("History", "#2ca02c"),
    ("Experience", "#9467bd"),
    ("Purpose", "#ff7f0e"),
];

fn family_color(family: &str) -> &'static str {
    FAMILY_COLORS
        .iter()
        .find(|(f, _)| *f == family)
        .map(|(_, c)| *c)
        .unwrap_or("#7f7f7f")
}

/// Line chart of normalized family importance over test periods, one
/// line per family, with a legend.
pub fn importance_svg(series: &ImportanceSeries) -> String {
    let width = 460.0;
    let height = 300.0;
    let plot_w = width - 150.0 - MARGIN;
    let plot_h = height - 2.0 * MARGIN;
    let periods: Vec<usize> = series.points.keys().copied().collect();

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    writeln!(
        svg,
        "<text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-size=\"12\">{:?} importance ({:?} window)</text>",
        width / 2.0,
        series.kind,
        series.horizon
    )
    .unwrap();
    writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333\"/>"
    )
    .unwrap();

    let x_of = |j: usize| {
        if periods.len() <= 1 {
            MARGIN + plot_w / 2.0
        } else {
            let first = periods[0] as f64;
            let last = *periods.last().unwrap() as f64;
            MARGIN + (j as f64 - first) / (last - first) * plot_w
        }
    };
    let y_of = |v: f64| MARGIN + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    for &j in &periods {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{j}</text>",
            x_of(j),
            MARGIN + plot_h + 14.0
        )
        .unwrap();
    }
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>",
            MARGIN - 6.0,
            y_of(tick) + 3.0
        )
        .unwrap();
    }

    let families: Vec<String> = series
        .points
        .values()
        .next()
        .map(|col| col.keys().cloned().collect())
        .unwrap_or_default();
    for (k, family) in families.iter().enumerate() {
        let color = family_color(family);
        let path: Vec<String> = periods
            .iter()
            .filter_map(|&j| {
                series.points[&j]
                    .get(family)
                    .map(|&v| format!("{},{}", x_of(j), y_of(v)))
            })
            .collect();
        if !path.is_empty() {
            writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                path.join(" ")
            )
            .unwrap();
        }
        for &j in &periods {
            if let Some(&v) = series.points[&j].get(family) {
                writeln!(
                    svg,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>",
                    x_of(j),
                    y_of(v)
                )
                .unwrap();
            }
        }
        // legend
        let ly = MARGIN + k as f64 * 16.0;
        let lx = MARGIN + plot_w + 14.0;
        writeln!(
            svg,
            "<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            ly - 8.0
        )
        .unwrap();
        writeln!(svg, "<text x=\"{}\" y=\"{ly}\">{family}</text>", lx + 14.0).unwrap();
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Testing period</text>",
        MARGIN + plot_w / 2.0,
        height - 6.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_importance_svg(series: &ImportanceSeries, path: &Path) -> Result<(), ReportError> {
    write_file(path, &importance_svg(series))
}

fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    (quantile(0.25), quantile(0.5), quantile(0.75))
}

/// Box-summary chart: one box (median, quartiles, min/max whiskers) per
/// group, labeled with the group name.
pub fn box_summary_svg(title: &str, groups: &BTreeMap<String, Vec<f64>>) -> String {
    let width = 120.0 + groups.len() as f64 * 100.0;
    let height = 320.0;
    let plot_h = height - 2.0 * MARGIN;

    let all: Vec<f64> = groups.values().flatten().copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_of = |v: f64| MARGIN + (1.0 - (v - lo) / (hi - lo)) * plot_h;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    writeln!(
        svg,
        "<text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-size=\"12\">{title}</text>",
        width / 2.0
    )
    .unwrap();
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>",
            MARGIN - 6.0,
            y_of(v) + 3.0
        )
        .unwrap();
    }

    for (k, (name, values)) in groups.iter().enumerate() {
        let cx = MARGIN + 50.0 + k as f64 * 100.0;
        let half = 28.0;
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (q1, q2, q3) = quartiles(values);
        writeln!(
            svg,
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"#333\"/>",
            y_of(vmin),
            y_of(vmax)
        )
        .unwrap();
        writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#cfe2f3\" stroke=\"#333\"/>",
            cx - half,
            y_of(q3),
            half * 2.0,
            (y_of(q1) - y_of(q3)).max(0.5)
        )
        .unwrap();
        writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#c00\" stroke-width=\"2\"/>",
            cx - half,
            y_of(q2),
            cx + half,
            y_of(q2)
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{name}</text>",
            MARGIN + plot_h + 16.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_box_summary_svg(
    title: &str,
    groups: &BTreeMap<String, Vec<f64>>,
    path: &Path,
) -> Result<(), ReportError> {
    write_file(path, &box_summary_svg(title, groups))
}

/// Importance series as CSV: one row per test period, one column per family.
pub fn importance_series_to_csv(series: &ImportanceSeries) -> String {
    let families: Vec<String> = series
        .points
        .values()
        .next()
        .map(|col| col.keys().cloned().collect())
        .unwrap_or_default();
    let mut out = String::from("test_period");
    for f in &families {
        write!(out, ",{f}").unwrap();
    }
    out.push('\n');
    for (j, col) in &series.points {
        write!(out, "{j}").unwrap();
        for f in &families {
            write!(out, ",{}", col[f]).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub dataset_name: String,
    pub config: serde_json::Value,
    pub dataset_summary: serde_json::Value,
    pub artifacts: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub warnings: Vec<String>,
}

pub fn emit_manifest(manifest: &RunManifest, path: &Path) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serialization");
    write_file(path, &json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Horizon;
    use crate::forest::ImportanceKind;

    fn sample_matrix() -> PerformanceMatrix {
        let mut m = PerformanceMatrix::new(Metric::Auc, Strategy::Spm, 3);
        m.insert(1, 2, 0.7123456789012345);
        m.insert(1, 3, 0.65);
        m.insert(2, 3, 0.8);
        m
    }

    #[test]
    fn three_period_csv_has_three_filled_cells() {
        let csv = matrix_to_csv(&sample_matrix());
        let filled: usize = csv
            .lines()
            .skip(1)
            .flat_map(|l| l.split(',').skip(1))
            .filter(|f| !f.is_empty())
            .count();
        assert_eq!(filled, 3);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn missing_cell_distinct_from_zero() {
        let mut m = PerformanceMatrix::new(Metric::Brier, Strategy::Lpm, 2);
        m.insert(1, 2, 0.0);
        let csv = matrix_to_csv(&m);
        // row for train 1 carries an explicit 0; the diagonal stays blank
        let row1: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row1, vec!["1", "", "0"]);
    }

    #[test]
    fn csv_round_trip_reproduces_matrix() {
        let m = sample_matrix();
        let parsed = parse_matrix_csv(&matrix_to_csv(&m), Metric::Auc, Strategy::Spm).unwrap();
        assert_eq!(parsed.n_periods, m.n_periods);
        for ((i, j), v) in m.cells() {
            assert_eq!(parsed.get(*i, *j), Some(*v));
        }
        assert_eq!(parsed.n_cells(), m.n_cells());
    }

    #[test]
    fn heatmap_single_cell() {
        let mut m = PerformanceMatrix::new(Metric::Auc, Strategy::Spm, 2);
        m.insert(1, 2, 0.75);
        let svg = heatmap_svg(&m);
        assert!(svg.contains("0.75"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_constant_matrix_renders() {
        let mut m = PerformanceMatrix::new(Metric::Brier, Strategy::Lpm, 3);
        m.insert(1, 2, 0.2);
        m.insert(1, 3, 0.2);
        m.insert(2, 3, 0.2);
        let svg = heatmap_svg(&m);
        assert_eq!(svg.matches("0.20").count(), 3);
    }

    #[test]
    fn importance_chart_has_five_legend_entries() {
        let mut points = BTreeMap::new();
        for j in 2..=5usize {
            let col: BTreeMap<String, f64> = [
                ("Size", 0.4),
                ("Diffusion", 0.2),
                ("History", 0.2),
                ("Experience", 0.15),
                ("Purpose", 0.05),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            points.insert(j, col);
        }
        let series = ImportanceSeries {
            kind: ImportanceKind::TypeI,
            horizon: Horizon::Short,
            points,
        };
        let svg = importance_svg(&series);
        for family in ["Size", "Diffusion", "History", "Experience", "Purpose"] {
            assert!(svg.contains(family), "missing legend entry {family}");
        }
        assert_eq!(svg.matches("<polyline").count(), 5);
    }

    #[test]
    fn box_summary_one_box_per_group() {
        let mut groups = BTreeMap::new();
        groups.insert("LPM".to_string(), vec![0.7, 0.75, 0.72, 0.8]);
        groups.insert("SPM".to_string(), vec![0.65, 0.7, 0.68, 0.72]);
        groups.insert("Weighted".to_string(), vec![0.71, 0.74, 0.7, 0.77]);
        let svg = box_summary_svg("AUC at final period", &groups);
        assert_eq!(svg.matches("<rect").count(), 3);
        for name in ["SPM", "LPM", "Weighted"] {
            assert!(svg.contains(name));
        }
    }

    #[test]
    fn quartiles_of_known_values() {
        let (q1, q2, q3) = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(q1, 2.0);
        assert_eq!(q2, 3.0);
        assert_eq!(q3, 4.0);
    }

    #[test]
    fn io_error_carries_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("not-a-dir");
        fs::write(&blocker, "x").unwrap();
        let target = blocker.join("y.csv");
        let err = emit_matrix_csv(&sample_matrix(), &target).unwrap_err();
        assert!(err.to_string().contains("y.csv"));
    }
}
