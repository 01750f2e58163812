use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use jitchrono::config::{parse_synth_spec, FileConfig};
use jitchrono::experiment::{
    run_rq1, run_rq2, run_rq3_kw, run_rq3_wsrt, run_weighted, ExperimentConfig, FamilyMap,
    Horizon, PerformanceMatrix, Rq1Result,
};
use jitchrono::forest::{ForestConfig, ImportanceKind};
use jitchrono::ingest::{load_dataset, stratify, summarize, Dataset, SchemaMap};
use jitchrono::report::{
    emit_box_summary_svg, emit_heatmap_svg, emit_importance_svg, emit_manifest, emit_matrix_csv,
    importance_series_to_csv, RunManifest,
};
use jitchrono::synth::{dataset_to_csv, generate_synthetic};

#[derive(Parser)]
#[command(name = "jitchrono", version, about = "Longitudinal just-in-time defect prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Calendar months per period
    #[arg(long, global = true)]
    window_months: Option<u32>,

    /// Master seed for all randomized steps
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Trees per random forest
    #[arg(long, global = true)]
    trees: Option<usize>,

    /// Output directory (fallback: JITCHRONO_OUT, then ./out)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// `key = value` config file; CLI flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for cell evaluation
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Omit training period 1 from emitted matrices and charts
    #[arg(long, global = true)]
    mask_first_train_period: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset size, defect ratio, and period layout
    Summarize { file: PathBuf },
    /// SPM/LPM performance matrices with heatmaps
    Rq1 { file: PathBuf },
    /// Family importance series with line charts
    Rq2 { file: PathBuf },
    /// Strategy comparison: signed-rank and Kruskal-Wallis tests
    Rq3 { file: PathBuf },
    /// Generate a synthetic dataset from a spec file
    Synth { spec_file: PathBuf },
    /// Summarize + RQ1 + RQ2 + RQ3 in one run
    All { file: PathBuf },
}

enum AppError {
    Data(String),
    Internal(String),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Data(m) | AppError::Internal(m) => m,
        }
    }
}

fn data_err<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Data(e.to_string())
}

fn internal_err<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Internal(e.to_string())
}

/// Flags merged with the config file (CLI wins), defaults filled in.
struct Resolved {
    experiment: ExperimentConfig,
    out_dir: PathBuf,
    schema: SchemaMap,
    delimiter: u8,
    mask_first_train_period: bool,
    threads: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<Resolved, AppError> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| AppError::Data(format!("cannot read config {}: {e}", path.display())))?;
            FileConfig::parse(&text)
                .map_err(|e| AppError::Data(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let forest = ForestConfig {
        n_trees: cli.trees.or(file.trees).unwrap_or(ForestConfig::default().n_trees),
        mtry: file.mtry,
        max_depth: file.max_depth,
        min_samples_split: file
            .min_samples_split
            .unwrap_or(ForestConfig::default().min_samples_split),
        seed: 0, // replaced per cell
    };
    let experiment = ExperimentConfig {
        window_months: cli.window_months.or(file.window_months).unwrap_or(6),
        forest,
        correlation_threshold: file.correlation_threshold.unwrap_or(0.7),
        master_seed: cli.seed.or(file.seed).unwrap_or(0),
        min_class_count: file.min_class_count.unwrap_or(5),
        weighted_test_periods: None,
    };
    let out_dir = cli
        .out_dir
        .clone()
        .or(file.out_dir.clone())
        .or_else(|| std::env::var_os("JITCHRONO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Resolved {
        experiment,
        out_dir,
        schema: file.schema_map(),
        delimiter: file.delimiter.unwrap_or(b','),
        mask_first_train_period: cli.mask_first_train_period
            || file.mask_first_train_period.unwrap_or(false),
        threads: cli.threads.or(file.threads),
    })
}

fn config_echo(r: &Resolved) -> serde_json::Value {
    serde_json::json!({
        "window_months": r.experiment.window_months,
        "seed": r.experiment.master_seed,
        "trees": r.experiment.forest.n_trees,
        "mtry": r.experiment.forest.mtry,
        "max_depth": r.experiment.forest.max_depth,
        "min_samples_split": r.experiment.forest.min_samples_split,
        "correlation_threshold": r.experiment.correlation_threshold,
        "min_class_count": r.experiment.min_class_count,
        "mask_first_train_period": r.mask_first_train_period,
        "threads": r.threads,
    })
}

fn load(file: &Path, r: &Resolved) -> Result<Dataset, AppError> {
    let name = file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let reader = fs::File::open(file)
        .map_err(|e| AppError::Data(format!("cannot open {}: {e}", file.display())))?;
    load_dataset(reader, &r.schema, &name, r.delimiter).map_err(data_err)
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (k, c) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn cmd_summarize(ds: &Dataset, r: &Resolved) {
    let s = summarize(ds);
    println!(
        "{} changes, {:.0}% defective",
        thousands(s.n_changes),
        s.defect_ratio * 100.0
    );
    let pd = stratify(ds, r.experiment.window_months);
    println!(
        "{} periods of {} months; period sizes: {}",
        pd.n_periods(),
        r.experiment.window_months,
        pd.periods
            .iter()
            .map(|p| p.records.len().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
}

/// Copy of `m` without the train = 1 row, for --mask-first-train-period.
fn masked(m: &PerformanceMatrix) -> PerformanceMatrix {
    let mut out = PerformanceMatrix::new(m.metric, m.strategy, m.n_periods);
    for (&(i, j), &v) in m.cells() {
        if i > 1 {
            out.insert(i, j, v);
        }
    }
    out
}

struct Emitter<'a> {
    out_dir: &'a Path,
    mask: bool,
    artifacts: Vec<String>,
}

impl<'a> Emitter<'a> {
    fn new(r: &'a Resolved) -> Self {
        Emitter {
            out_dir: &r.out_dir,
            mask: r.mask_first_train_period,
            artifacts: Vec::new(),
        }
    }

    fn record(&mut self, path: PathBuf) {
        println!("wrote {}", path.display());
        self.artifacts.push(path.display().to_string());
    }

    fn matrix(&mut self, m: &PerformanceMatrix, stem: &str) -> Result<(), AppError> {
        let visible = if self.mask { masked(m) } else { m.clone() };
        let csv_path = self.out_dir.join(format!("{stem}.csv"));
        emit_matrix_csv(&visible, &csv_path).map_err(internal_err)?;
        self.record(csv_path);
        let svg_path = self.out_dir.join(format!("{stem}.svg"));
        emit_heatmap_svg(&visible, &svg_path).map_err(internal_err)?;
        self.record(svg_path);
        Ok(())
    }

    fn text(&mut self, content: &str, name: &str) -> Result<(), AppError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(internal_err)?;
        }
        fs::write(&path, content).map_err(internal_err)?;
        self.record(path);
        Ok(())
    }
}

fn cmd_rq1(ds: &Dataset, r: &Resolved, emitter: &mut Emitter) -> Result<Rq1Result, AppError> {
    let pd = stratify(ds, r.experiment.window_months);
    let rq1 = run_rq1(&pd, &r.experiment);
    emitter.matrix(&rq1.spm_auc, "rq1_spm_auc")?;
    emitter.matrix(&rq1.spm_brier, "rq1_spm_brier")?;
    emitter.matrix(&rq1.lpm_auc, "rq1_lpm_auc")?;
    emitter.matrix(&rq1.lpm_brier, "rq1_lpm_brier")?;
    for f in &rq1.failures {
        eprintln!(
            "warning: {} cell ({}, {}) skipped: {}",
            f.strategy.label(),
            f.train,
            f.test,
            f.reason
        );
    }
    Ok(rq1)
}

fn series_stem(kind: ImportanceKind, horizon: Horizon) -> String {
    let kind = match kind {
        ImportanceKind::TypeI => "type1",
        ImportanceKind::TypeII => "type2",
    };
    let horizon = match horizon {
        Horizon::Short => "short",
        Horizon::Long => "long",
    };
    format!("rq2_{kind}_{horizon}")
}

fn cmd_rq2(
    ds: &Dataset,
    r: &Resolved,
    emitter: &mut Emitter,
    warnings: &mut Vec<String>,
) -> Result<(), AppError> {
    let pd = stratify(ds, r.experiment.window_months);
    let rq2 = run_rq2(&pd, &r.experiment, &FamilyMap::default());
    for series in &rq2.series {
        let stem = series_stem(series.kind, series.horizon);
        emitter.text(&importance_series_to_csv(series), &format!("{stem}.csv"))?;
        let svg_path = emitter.out_dir.join(format!("{stem}.svg"));
        emit_importance_svg(series, &svg_path).map_err(internal_err)?;
        emitter.record(svg_path);
    }
    for w in &rq2.warnings {
        eprintln!("warning: {w}");
    }
    warnings.extend(rq2.warnings);
    Ok(())
}

fn cmd_rq3(
    ds: &Dataset,
    r: &Resolved,
    rq1: &Rq1Result,
    emitter: &mut Emitter,
) -> Result<(), AppError> {
    let pd = stratify(ds, r.experiment.window_months);
    let n = pd.n_periods();
    let weighted = run_weighted(&pd, &r.experiment);
    emitter.matrix(&weighted.auc, "rq3_weighted_auc")?;
    emitter.matrix(&weighted.brier, "rq3_weighted_brier")?;
    for f in &weighted.failures {
        eprintln!(
            "warning: Weighted cell ({}, {}) skipped: {}",
            f.train, f.test, f.reason
        );
    }

    let wsrt_auc = run_rq3_wsrt(&rq1.spm_auc, &rq1.lpm_auc);
    let wsrt_brier = run_rq3_wsrt(&rq1.spm_brier, &rq1.lpm_brier);
    let kw_auc = run_rq3_kw(&rq1.spm_auc, &rq1.lpm_auc, &weighted.auc, n);
    let kw_brier = run_rq3_kw(&rq1.spm_brier, &rq1.lpm_brier, &weighted.brier, n);

    for kw in [&kw_auc, &kw_brier] {
        let title = format!("{} by strategy, test period {}", kw.metric.label(), n);
        let path = emitter
            .out_dir
            .join(format!("rq3_box_{}.svg", kw.metric.label().to_lowercase()));
        emit_box_summary_svg(&title, &kw.groups, &path).map_err(internal_err)?;
        emitter.record(path);
    }

    let results = serde_json::json!({
        "wsrt": [wsrt_auc, wsrt_brier],
        "kruskal_wallis": [kw_auc, kw_brier],
    });
    emitter.text(
        &serde_json::to_string_pretty(&results).map_err(internal_err)?,
        "rq3_tests.json",
    )?;

    for s in [&wsrt_auc, &wsrt_brier] {
        println!(
            "WSRT {}: median SPM {:.3}, median LPM {:.3}, p = {:.4} ({} pairs)",
            s.metric.label(),
            s.median_spm,
            s.median_lpm,
            s.result.p_value,
            s.n_pairs
        );
    }
    for kw in [&kw_auc, &kw_brier] {
        println!(
            "Kruskal-Wallis {} at test period {}: H = {:.3}, p = {:.4}",
            kw.metric.label(),
            kw.test_period,
            kw.result.statistic,
            kw.result.p_value
        );
    }
    Ok(())
}

fn cmd_synth(spec_file: &Path, r: &Resolved, emitter: &mut Emitter) -> Result<(), AppError> {
    let text = fs::read_to_string(spec_file)
        .map_err(|e| AppError::Data(format!("cannot read {}: {e}", spec_file.display())))?;
    let spec = parse_synth_spec(&text)
        .map_err(|e| AppError::Data(format!("spec {}: {e}", spec_file.display())))?;
    let ds = generate_synthetic(&spec, r.experiment.master_seed);
    emitter.text(&dataset_to_csv(&ds), "synthetic.csv")?;
    println!(
        "generated {} rows over {} periods",
        ds.records.len(),
        spec.n_periods
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), AppError> {
    let r = resolve(cli)?;
    if let Some(threads) = r.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(internal_err)?;
    }

    let mut emitter = Emitter::new(&r);
    let mut warnings = Vec::new();
    let mut timings: BTreeMap<String, u128> = BTreeMap::new();
    let timed = |name: &str,
                     timings: &mut BTreeMap<String, u128>,
                     f: &mut dyn FnMut() -> Result<(), AppError>|
     -> Result<(), AppError> {
        let start = Instant::now();
        let out = f();
        timings.insert(name.to_string(), start.elapsed().as_millis());
        out
    };

    let mut dataset_summary = serde_json::Value::Null;
    let mut dataset_name = String::new();
    let mut load_named = |file: &Path| -> Result<Dataset, AppError> {
        let ds = load(file, &r)?;
        dataset_name = ds.name.clone();
        dataset_summary = serde_json::to_value(summarize(&ds)).map_err(internal_err)?;
        Ok(ds)
    };

    match &cli.command {
        Command::Summarize { file } => {
            let ds = load_named(file)?;
            cmd_summarize(&ds, &r);
            return Ok(()); // no artifacts, no manifest
        }
        Command::Rq1 { file } => {
            let ds = load_named(file)?;
            timed("rq1", &mut timings, &mut || {
                cmd_rq1(&ds, &r, &mut emitter).map(|_| ())
            })?;
        }
        Command::Rq2 { file } => {
            let ds = load_named(file)?;
            timed("rq2", &mut timings, &mut || {
                cmd_rq2(&ds, &r, &mut emitter, &mut warnings)
            })?;
        }
        Command::Rq3 { file } => {
            let ds = load_named(file)?;
            let mut rq1 = None;
            timed("rq1", &mut timings, &mut || {
                rq1 = Some(cmd_rq1(&ds, &r, &mut emitter)?);
                Ok(())
            })?;
            timed("rq3", &mut timings, &mut || {
                cmd_rq3(&ds, &r, rq1.as_ref().unwrap(), &mut emitter)
            })?;
        }
        Command::Synth { spec_file } => {
            dataset_name = "synthetic".to_string();
            timed("synth", &mut timings, &mut || {
                cmd_synth(spec_file, &r, &mut emitter)
            })?;
        }
        Command::All { file } => {
            let ds = load_named(file)?;
            cmd_summarize(&ds, &r);
            let mut rq1 = None;
            timed("rq1", &mut timings, &mut || {
                rq1 = Some(cmd_rq1(&ds, &r, &mut emitter)?);
                Ok(())
            })?;
            timed("rq2", &mut timings, &mut || {
                cmd_rq2(&ds, &r, &mut emitter, &mut warnings)
            })?;
            timed("rq3", &mut timings, &mut || {
                cmd_rq3(&ds, &r, rq1.as_ref().unwrap(), &mut emitter)
            })?;
        }
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_name,
        config: config_echo(&r),
        dataset_summary,
        artifacts: emitter.artifacts.clone(),
        timings_ms: timings,
        warnings,
    };
    let manifest_path = r.out_dir.join("run_manifest.json");
    emit_manifest(&manifest, &manifest_path).map_err(internal_err)?;
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
