mod common;

use std::fs;
use std::path::Path;

use common::{run, Output, Server};
use serde_json::Value;
use virtdoc::artifact::ModelArtifact;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn single_line_error(out: &Output, code: i32) -> Value {
    assert_eq!(out.code, code, "stdout: {} stderr: {}", out.stdout, out.stderr);
    assert_eq!(out.stderr.trim_end().lines().count(), 1, "{}", out.stderr);
    let v: Value = serde_json::from_str(out.stderr.trim()).unwrap();
    assert_eq!(v["exit_code"], code);
    v
}

/// Writes a 1200-record cohort (optionally with HbA1c) and a model trained
/// on it with few epochs.
fn cohort_and_model(dir: &Path, hba1c: bool) -> (String, String) {
    let data = dir.join(if hba1c { "h.csv" } else { "c.csv" });
    let model = dir.join(if hba1c { "h.json" } else { "m.json" });
    let mut args = vec!["gen-data", "--n", "1200", "--seed", "5", "--out", p(&data)];
    if hba1c {
        args.push("--with-hba1c");
    }
    assert_eq!(run(&args).code, 0);
    let features = if hba1c { "hba1c" } else { "basic" };
    let out = run(&["train", "--data", p(&data), "--features", features, "--epochs", "30", "--seed", "2", "--out", p(&model)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    (data.to_str().unwrap().into(), model.to_str().unwrap().into())
}

#[test]
fn gen_data_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&["gen-data", "--n", "4814", "--seed", "3", "--out", p(&a)]).code, 0);
    assert_eq!(run(&["gen-data", "--n", "4814", "--seed", "3", "--out", p(&b)]).code, 0);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 4815);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let out = run(&["gen-data", "--n", "50", "--out", p(&dir.path().join("x.csv"))]);
    single_line_error(&out, 3);
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn train_writes_valid_reproducible_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = cohort_and_model(dir.path(), false);
    let artifact = ModelArtifact::load(&model).unwrap().artifact;
    artifact.validate().unwrap();
    assert_eq!(artifact.metadata.seed, 2);

    let again = dir.path().join("again.json");
    run(&["train", "--data", &data, "--epochs", "30", "--seed", "2", "--out", p(&again)]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let out = run(&["train", "--data", &data, "--layers", "4", "--out", p(&dir.path().join("four.json"))]);
    let err = single_line_error(&out, 2);
    assert!(err["message"].as_str().unwrap().contains("hidden layers"));

    let platt = dir.path().join("platt.json");
    let out = run(&["train", "--data", &data, "--epochs", "10", "--calibrate", "platt", "--out", p(&platt)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&fs::read_to_string(&platt).unwrap()).unwrap();
    assert_eq!(v["calibration"]["method"], "platt");

    let out = run(&["train", "--data", p(&dir.path().join("nope.csv")), "--out", p(&platt)]);
    single_line_error(&out, 3);
}

#[test]
fn evaluate_emits_parseable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = cohort_and_model(dir.path(), false);
    let prefix = format!("{}/ev_", dir.path().display());
    let out = run(&["evaluate", "--model", &model, "--data", &data, "--repeats", "4", "--permutations", "199", "--out-prefix", &prefix]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let summary: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(summary["evaluated_on"], "held_out_test_partition");
    assert!(summary["permutation_p_value"].as_f64().unwrap() <= 0.05);
    for name in ["roc.csv", "auc_distribution.csv", "reliability.csv"] {
        let mut reader = csv::Reader::from_path(format!("{prefix}{name}")).unwrap();
        let rows = reader.records().collect::<Result<Vec<_>, _>>().unwrap();
        assert!(!rows.is_empty(), "{name}");
    }
    let dist = fs::read_to_string(format!("{prefix}auc_distribution.csv")).unwrap();
    assert_eq!(dist.lines().count(), 5);
}

#[test]
fn sweep_grid_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c.csv");
    run(&["gen-data", "--n", "600", "--seed", "1", "--out", p(&data)]);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &Path| {
        run(&["sweep", "--data", p(&data), "--depths", "1,2", "--widths", "1-20", "--repeats", "2", "--epochs", "5", "--seed", "4", "--out", p(out)])
    };
    assert_eq!(args(&a).code, 0);
    assert_eq!(args(&b).code, 0);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("width,depth,mean_auc"));
    for depth in ["1", "2"] {
        let rows = text.lines().skip(1).filter(|l| l.split(',').nth(1) == Some(depth)).count();
        assert_eq!(rows, 20);
    }
}

#[test]
fn predict_reports_consistent_decision() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = cohort_and_model(dir.path(), false);
    let out = run(&["predict", "--model", &model, "--sex", "male", "--age", "60", "--weight", "86.2", "--height", "1.748", "--answers", "yes,yes,10,10"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert!((v["bmi"].as_f64().unwrap() - 28.2).abs() < 0.05);
    let p = v["adjusted_probability"].as_f64().unwrap();
    assert!(p > v["base_probability"].as_f64().unwrap());
    let expected = if p < 0.3 { "LowRisk" } else if p <= 0.7 { "RecommendHbA1cTest" } else { "HighRiskSeePhysician" };
    assert_eq!(v["decision"], expected);

    let out = run(&["predict", "--model", &model, "--sex", "female", "--age", "55", "--bmi", "27.6"]);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(v["adjusted_probability"], v["base_probability"]);

    let out = run(&["predict", "--model", &model, "--sex", "male", "--age", "60", "--bmi", "28", "--answers", "maybe"]);
    single_line_error(&out, 2);
}

#[test]
fn predict_hba1c_model_needs_hba1c() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = cohort_and_model(dir.path(), true);
    let out = run(&["predict", "--model", &model, "--sex", "male", "--age", "60", "--bmi", "28.2"]);
    let err = single_line_error(&out, 3);
    assert!(err["message"].as_str().unwrap().contains("hba1c"));
    let out = run(&["predict", "--model", &model, "--sex", "male", "--age", "60", "--bmi", "28.2", "--hba1c", "6.9"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
}

#[test]
fn simulate_session_replays_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = cohort_and_model(dir.path(), false);
    let canonical = common::fixture("canonical_script.json");
    let first = run(&["simulate-session", "--model", &model, "--script", p(&canonical)]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let report: Value = serde_json::from_str(&first.stdout).unwrap();
    assert_eq!(report["transcript"].as_array().unwrap().len(), 9);
    let second = run(&["simulate-session", "--model", &model, "--script", p(&canonical)]);
    assert_eq!(first.stdout, second.stdout);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"[{"utterance":"hi"},{"utterance":"x"},{"utterance":"y"},{"utterance":"z"},{"utterance":"w"}]"#).unwrap();
    let out = run(&["simulate-session", "--model", &model, "--script", p(&bad)]);
    let err = single_line_error(&out, 3);
    assert!(err["message"].as_str().unwrap().contains("too many failed attempts"));

    let short = dir.path().join("short.json");
    fs::write(&short, r#"[{"utterance":"hi"}]"#).unwrap();
    single_line_error(&run(&["simulate-session", "--model", &model, "--script", p(&short)]), 3);
}

#[test]
fn usage_errors_are_single_lines() {
    single_line_error(&run(&["train"]), 2);
    single_line_error(&run(&["frobnicate"]), 2);
    assert_eq!(run(&["--help"]).code, 0);
}

#[test]
fn serve_answers_health_and_honours_port_env() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = cohort_and_model(dir.path(), false);
    let server = Server::start(Path::new(&model), &dir.path().join("data"));
    let (status, body) = server.request("GET", "/api/health", None);
    assert_eq!(status, 200);
    let health: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(health["model_hash"].as_str().unwrap(), virtdoc::artifact::sha256_hex(&fs::read(&model).unwrap()));
    drop(server);

    // The environment wins over the flag; port 0 asks the OS for a free one.
    let server = Server::start_with(Path::new(&model), &dir.path().join("data"), &["--port", "1"], Some("0"));
    assert_eq!(server.request("GET", "/api/health", None).0, 200);
    drop(server);

    let out = run(&["serve", "--model", p(&dir.path().join("missing.json")), "--port", "0"]);
    single_line_error(&out, 3);
}
