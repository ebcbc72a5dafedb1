use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soc-icnn"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env("SOCICNN_THREADS", "4")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn verify_example_passes_its_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify", "--trials", "10", "--d0", "10", "--width", "16", "--depth", "2", "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 20);
    for s in report["summaries"].as_array().unwrap() {
        assert!(s["metrics"]["primal_dual_gap"]["max"].as_f64().unwrap() <= 1e-9);
        assert_eq!(s["metrics"].as_object().unwrap().len(), 11);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "verify");
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["library_version"].is_string());
    assert_eq!(files(dir.path()), BTreeSet::from(["diagnostics.json".into(), "manifest.json".into()]));
}

#[test]
fn training_twice_gives_identical_model_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["train", "--target", "QuadraticIso", "--d", "5", "--variant", "SOC", "--seed", "1"];
    for dir in [&a, &b] {
        let out = run(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let model_a = std::fs::read(a.path().join("model.json")).unwrap();
    assert_eq!(model_a, std::fs::read(b.path().join("model.json")).unwrap());
    assert_eq!(
        std::fs::read(a.path().join("history.csv")).unwrap(),
        std::fs::read(b.path().join("history.csv")).unwrap()
    );
    assert_eq!(csv_rows(&a.path().join("history.csv"))[0], ["epoch", "train_loss", "val_loss"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["relerr"].as_f64().unwrap() < 0.1);
}

#[test]
fn benchmark_ranks_soc_ahead_of_relu_on_the_norm() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["benchmark", "--target", "NormEuclid", "--d", "10", "--variants", "ReLU,SOC", "--seeds", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("benchmark.csv"));
    assert_eq!(rows[0], ["target", "model", "d", "relerr_mean", "relerr_std", "params", "depth", "width"]);
    let relerr = |m: &str| rows.iter().find(|r| r[1] == m).unwrap()[3].parse::<f64>().unwrap();
    let params = |m: &str| rows.iter().find(|r| r[1] == m).unwrap()[5].parse::<usize>().unwrap();
    assert!(relerr("SOC") < relerr("ReLU"), "SOC {} vs ReLU {}", relerr("SOC"), relerr("ReLU"));
    assert!(params("ReLU") >= params("SOC"));
}

#[test]
fn decide_and_theory_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["decide", "--family", "box_socp", "--d", "4", "--instances", "2", "--oracle-restarts", "4", "--oracle-steps", "300", "--epochs", "20", "--check"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("decisions.csv"));
    assert_eq!(
        rows[0],
        ["task", "family", "d", "seed", "model", "regret", "decision_error", "surrogate_value", "true_value"]
    );
    assert_eq!(rows.len(), 3);

    let out = run(dir.path(), &["theory", "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("theory.csv"));
    assert_eq!(rows[0], ["d", "N", "sup_error", "bound"]);
    assert_eq!(rows.len(), 9);
}

#[test]
fn unknown_names_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--target", "Rosenbrock", "--d", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("NormEuclid") && err.contains("ICKANPaperTarget"), "{err}");
    let out = run(dir.path(), &["decide", "--family", "Knapsack"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BudgetHuber"));
}

#[test]
fn check_reports_breaches_with_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["benchmark", "--target", "NormEuclid", "--d", "10", "--variants", "SOC", "--seeds", "1", "--n-train", "100", "--epochs", "1", "--check"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("check failed") && err.contains("SOC"), "{err}");
    assert!(dir.path().join("benchmark.csv").exists());
}

#[test]
fn invalid_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_soc-icnn"))
        .args(["theory", "--output-dir"])
        .arg(dir.path())
        .env("SOCICNN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
