//! End-to-end checks of the command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jitchrono"))
}

fn synth_csv(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.txt");
    fs::write(&spec, "n_periods = 4\nrows_per_period = 120\nbase_defect_rate = 0.3\n").unwrap();
    let out = bin()
        .args(["synth"])
        .arg(&spec)
        .arg("--out-dir")
        .arg(dir)
        .args(["--seed", "11"])
        .output()
        .unwrap();
    assert!(out.status.success(), "synth failed: {out:?}");
    dir.join("synthetic.csv")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn unknown_subcommand_exits_1_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(text.contains("Usage"), "no usage text: {text}");
}

#[test]
fn missing_input_exits_2() {
    let out = bin().args(["summarize", "/no/such/file.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "trees = plenty\n").unwrap();
    let csv = synth_csv(dir.path());
    let out = bin()
        .args(["summarize"])
        .arg(&csv)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn summarize_reports_counts_and_periods() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth_csv(dir.path());
    let out = bin().args(["summarize"]).arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("480 changes"), "{text}");
    assert!(text.contains("% defective"), "{text}");
    assert!(text.contains("4 periods of 6 months"), "{text}");
}

#[test]
fn rq1_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth_csv(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "trees = 20\n").unwrap();

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = bin()
            .args(["rq1"])
            .arg(&csv)
            .args(["--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "rq1 failed: {out:?}");
        let mut bundle = Vec::new();
        for stem in ["rq1_spm_auc", "rq1_spm_brier", "rq1_lpm_auc", "rq1_lpm_brier"] {
            bundle.push(fs::read(out_dir.join(format!("{stem}.csv"))).unwrap());
        }
        outputs.push(bundle);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn cli_flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth_csv(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "trees = 20\nseed = 99\nwindow_months = 12\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["rq1"])
        .arg(&csv)
        .args(["--window-months", "6", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["window_months"], 6); // flag wins
    assert_eq!(manifest["config"]["seed"], 99); // file fills the gap
    assert_eq!(manifest["config"]["trees"], 20);
}

#[test]
fn mask_flag_blanks_first_train_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth_csv(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "trees = 20\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["rq1"])
        .arg(&csv)
        .args(["--seed", "7", "--mask-first-train-period", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(out_dir.join("rq1_spm_auc.csv")).unwrap();
    let row1 = text.lines().nth(1).unwrap();
    assert!(
        row1.split(',').skip(1).all(|f| f.is_empty()),
        "train-1 row not blank: {row1}"
    );
    let row2 = text.lines().nth(2).unwrap();
    assert!(row2.split(',').skip(2).any(|f| !f.is_empty()));
}

#[test]
fn env_out_dir_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "n_periods = 2\nrows_per_period = 60\n").unwrap();
    let out_dir = dir.path().join("from-env");
    let out = bin()
        .args(["synth"])
        .arg(&spec)
        .env("JITCHRONO_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    assert!(out_dir.join("synthetic.csv").exists());
}

#[test]
fn manifest_lists_existing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth_csv(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "trees = 20\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["rq1"])
        .arg(&csv)
        .args(["--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 8); // 4 CSVs + 4 SVGs
    for a in artifacts {
        assert!(Path::new(a.as_str().unwrap()).exists(), "missing {a}");
    }
    assert!(manifest["timings_ms"]["rq1"].is_number());
}
