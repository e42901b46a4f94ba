use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gbm::commands::{FitSettings, DESIGN_X_FILE, DESIGN_Z_FILE, EXIT_INPUT, EXIT_OK, EXIT_USAGE, SETTINGS_FILE};
use gbm::estimation::fit;
use gbm::io::{read_json, read_params, read_table, RunManifest, MANIFEST_FILE};
use gbm::model::{CovariateSet, DataMatrix};
use tempfile::TempDir;

fn gbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbm")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gbm(args);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a small data set and fits it; returns (data dir, fit dir).
fn simulate_and_fit(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let data = tmp.path().join("data");
    let fitted = tmp.path().join("fit");
    ok(&["simulate", "--dims", "40x15x2x2x1", "--seed", "3", "--out", path(&data)]);
    ok(&[
        "fit",
        "--counts",
        path(&data.join("Y.csv")),
        "--row-covariates",
        path(&data.join("X.csv")),
        "--col-covariates",
        path(&data.join("Z.csv")),
        "--latent",
        "1",
        "--out",
        path(&fitted),
    ]);
    (data, fitted)
}

#[test]
fn simulate_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        ok(&["simulate", "--dims", "30x10x2x2x1", "--seed", seed, "--out", path(&dir)]);
        std::fs::read(dir.join("Y.csv")).unwrap()
    };
    let first = run("a", "8");
    assert_eq!(first, run("b", "8"));
    assert_ne!(first, run("c", "9"));
}

#[test]
fn saved_fit_equals_in_memory_fit() {
    let tmp = TempDir::new().unwrap();
    let (data, fitted) = simulate_and_fit(&tmp);
    let (saved, summary) = read_params(&fitted).unwrap();
    assert_eq!(summary.x_names.len(), 2);

    let settings: FitSettings = read_json(&fitted.join(SETTINGS_FILE)).unwrap();
    let x = read_table(&fitted.join(DESIGN_X_FILE)).unwrap().data;
    let z = read_table(&fitted.join(DESIGN_Z_FILE)).unwrap().data;
    let cov = CovariateSet::new(x, z).unwrap();
    let y = DataMatrix::from_f64(&read_table(&data.join("Y.csv")).unwrap().data).unwrap();
    let direct = fit(&y, &cov, settings.latent, &settings.prior, &settings.fit).unwrap();
    assert_eq!(saved, direct.params);

    let manifest: RunManifest = read_json(&fitted.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.command, "fit");
    assert_eq!(manifest.inputs.len(), 3);
    assert!(manifest.convergence.unwrap().iterations >= 1);
}

#[test]
fn downstream_commands_consume_a_fit() {
    let tmp = TempDir::new().unwrap();
    let (data, fitted) = simulate_and_fit(&tmp);
    let counts = data.join("Y.csv");
    let inferred = tmp.path().join("se");
    ok(&["infer", "--counts", path(&counts), "--fit", path(&fitted), "--test", "B:2", "--out", path(&inferred)]);
    let wald = read_table(&inferred.join("wald_B2.csv")).unwrap();
    assert_eq!(wald.data.shape(), (40, 5));
    assert!(wald.data.column(2).iter().all(|p| (0.0..=1.0).contains(p)));

    let report = tmp.path().join("eval.json");
    ok(&[
        "evaluate",
        "--fit",
        path(&fitted),
        "--truth",
        path(&data.join("truth")),
        "--se",
        path(&inferred),
        "--out",
        path(&report),
    ]);
    let value: serde_json::Value = read_json(&report).unwrap();
    assert!(value["relative_mse"]["c"].as_f64().unwrap() < 1.0);
    assert_eq!(value["coverage"].as_array().unwrap().len(), 7);

    let resid = tmp.path().join("resid.csv");
    ok(&["residualize", "--counts", path(&counts), "--fit", path(&fitted), "--keep-z", "2", "--out", path(&resid)]);
    assert_eq!(read_table(&resid).unwrap().data.shape(), (40, 15));
}

#[test]
fn score_reports_each_column() {
    let tmp = TempDir::new().unwrap();
    let series = tmp.path().join("x.csv");
    let weights = tmp.path().join("w.csv");
    let rows: String = (0..50).map(|i| format!("{},{}\n", i as f64 * 0.5, (i % 7) as f64)).collect();
    std::fs::write(&series, format!("trend,wobble\n{rows}")).unwrap();
    std::fs::write(&weights, "1,2\n".repeat(50)).unwrap();
    let out = tmp.path().join("score.json");
    ok(&["score", "--series", path(&series), "--weights", path(&weights), "--bandwidth", "4", "--out", path(&out)]);
    let value: serde_json::Value = read_json(&out).unwrap();
    let scores = value["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 2);
    assert_eq!(scores[0]["series"], "trend");
    assert!((scores[0]["wmad"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = TempDir::new().unwrap();
    let out = path(tmp.path());
    let code = |args: &[&str]| gbm(args).status.code();
    assert_eq!(code(&["simulate", "--scheme", "NB/Uniform/Normal", "--out", out]), Some(EXIT_USAGE));
    assert_eq!(code(&["simulate", "--dims", "10x5", "--out", out]), Some(EXIT_USAGE));
    assert_eq!(code(&["fit", "--counts", "/nonexistent/Y.csv", "--out", out]), Some(EXIT_INPUT));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,x\n").unwrap();
    let stderr = String::from_utf8(gbm(&["fit", "--counts", path(&bad), "--out", out]).stderr).unwrap();
    assert!(stderr.contains("bad.csv:2:2"), "{stderr}");

    let fitted = tmp.path().join("fit");
    let (data, fitted_dir) = simulate_and_fit(&tmp);
    assert_eq!(fitted, fitted_dir);
    let counts = data.join("Y.csv");
    let args = ["infer", "--counts", path(&counts), "--fit", path(&fitted), "--test", "Q:1", "--out", out];
    assert_eq!(code(&args), Some(EXIT_USAGE));
}
