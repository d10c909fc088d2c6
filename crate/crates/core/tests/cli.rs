use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const QUICK: &str = include_str!("../configs/quick.toml");

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text.replace("out_dir = \"../out/quick\"", "out_dir = \"out\"")).unwrap();
    path
}

fn cli(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffcascade"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--deterministic")
        .env_remove("DIFFCASCADE_SEED")
        .env_remove("DIFFCASCADE_OUT")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    (header, r.records().map(Result::unwrap).collect())
}

#[test]
fn zero_percentile_accepts_every_student_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &QUICK.replace("percentile = 60.0", "percentile = 0.0"));
    let out = cli(&["run-adaptive"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/adaptive/report.json"));
    assert_eq!(report["accept_rate"], 1.0);
    assert_eq!(report["mean_nfe"], 5.0);
}

#[test]
fn sweeps_emit_tables_of_the_configured_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = cli(&["sweep-budget"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("out/sweep_budget/table.csv"));
    assert_eq!(&header[..5], ["sigma", "k", "student_steps", "improve_steps", "average_steps"]);
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let k: f64 = r[1].parse().unwrap();
        let improve: f64 = r[3].parse().unwrap();
        let avg: f64 = r[4].parse().unwrap();
        assert!((avg - (5.0 + k / 100.0 * improve)).abs() < 1e-9);
    }

    let out = cli(&["sweep-oracle", "--stage-only"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("out/sweep_oracle/table.csv"));
    assert!(header.iter().any(|h| h == "win_rate"));
    let acc: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(acc, [0.5, 0.75, 1.0]);
}

#[test]
fn unknown_keys_are_reported_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = QUICK.replace("[calibrate]\n", "[calibrate]\nthreshold = 1\n") + "\nextra = true\n";
    let out = cli(&["calibrate"], &write_config(dir.path(), &text));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("calibrate.threshold") && err.contains("extra"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_only_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["distill", "--stage-only"], &write_config(dir.path(), QUICK));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-teacher"));
}

#[test]
fn downstream_deletion_keeps_upstream_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    assert!(cli(&["run-adaptive"], &cfg).status.success());
    let manifest = dir.path().join("out/manifest.json");
    let before = read_json(&manifest);
    std::fs::remove_dir_all(dir.path().join("out/adaptive")).unwrap();
    let out = cli(&["run-adaptive", "--stage-only"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let after = read_json(&manifest);
    assert_eq!(before, after);
}

#[test]
fn seed_override_changes_the_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let out = Command::new(env!("CARGO_BIN_EXE_diffcascade"))
        .args(["train-teacher", "--config"])
        .arg(&cfg)
        .env("DIFFCASCADE_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read_json(&dir.path().join("out/manifest.json"))["global_seed"], 99);
}

#[test]
fn plot_renders_every_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["plot"], &write_config(dir.path(), QUICK));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["score_vs_steps", "win_rate_by_distance", "curvature_vs_distance", "oracle_accuracy"] {
        let svg = std::fs::read_to_string(dir.path().join(format!("out/plots/{name}.svg"))).unwrap();
        assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    }
}
