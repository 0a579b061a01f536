use std::path::Path;
use std::process::{Command, Output};

use aipcw_core::sim::SimulationReport;
use aipcw_core::{generate, Scenario, ScenarioSpec};

fn aipcw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aipcw")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn uncensored_csv(dir: &Path) -> String {
    let shadow = generate(&ScenarioSpec::new(Scenario::One, 300, 4)).unwrap().shadow;
    let mut buf = Vec::new();
    shadow.write_csv(&mut buf).unwrap();
    write(dir, "uncensored.csv", &String::from_utf8(buf).unwrap())
}

#[test]
fn missing_delta_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "time,group\n1.0,0\n2.0,1\n");
    let out = aipcw(&["fit", "--input", &input]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("delta"), "{}", stderr(&out));
}

#[test]
fn bad_row_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "time,delta,group\n1.0,1,0\n2.0,2,1\n");
    let out = aipcw(&["fit", "--input", &input]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 3"), "{}", stderr(&out));
}

#[test]
fn unknown_estimator_and_bad_options_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = uncensored_csv(dir.path());
    assert_eq!(aipcw(&["fit", "--input", &input, "--estimators", "nope"]).status.code(), Some(2));
    assert_eq!(aipcw(&["fit", "--input", &input, "--folds", "1"]).status.code(), Some(2));
    assert_eq!(aipcw(&["fit", "--input", &input, "--trim", "2"]).status.code(), Some(2));
}

#[test]
fn uncensored_data_gives_identical_mple_and_aipcw() {
    let dir = tempfile::tempdir().unwrap();
    let input = uncensored_csv(dir.path());
    let out = aipcw(&["fit", "--input", &input, "--estimators", "mple,aipcw-cox-cox", "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let est = doc["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 2);
    let (a, b) = (est[0]["beta"].as_f64().unwrap(), est[1]["beta"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    assert!((est[0]["hazard_ratio"].as_f64().unwrap() - a.exp()).abs() < 1e-12);
}

#[test]
fn table_output_lists_estimates_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s1.csv");
    let gen = aipcw(&["generate", "--scenario", "one", "--n", "400", "--seed", "2", "--output", csv.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    let out = aipcw(&["fit", "--input", csv.to_str().unwrap(), "--estimators", "mple,ipcw-a,aipcw-cox-cox"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["mple", "ipcw-a", "aipcw-cox-cox", "95% CI", "min_censoring_survival_at_events"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
}

#[test]
fn one_group_only_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "one.csv", "time,delta,group\n1,1,0\n2,1,0\n3,0,0\n");
    let out = aipcw(&["fit", "--input", &input, "--estimators", "mple"]);
    assert_ne!(out.status.code(), Some(0));
}

const SMOKE: &str = "scenario = \"one\"\nn = 50\nreplications = 2\nestimators = [\"mple\"]\n";

#[test]
fn simulate_smoke_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "study.toml", SMOKE);
    let report = dir.path().join("report.csv");
    let out = aipcw(&["simulate", "--config", &config, "--output", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("config sha256: "), "{text}");
    let rows = SimulationReport::rows_from_csv(std::fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].estimator, "mple");
    let header = std::fs::read_to_string(&report).unwrap();
    assert!(header.starts_with("estimator,bias,sd,se,cp,n_fail\n"));
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "study.toml",
        "scenario = \"two\"\nn = 150\nreplications = 6\nseed = 3\nestimators = [\"mple\", \"ipcw-cox\", \"aipcw-cox-cox\", \"aipcw-rsf-cox\"]\n[forest]\nn_trees = 10\n",
    );
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let report = dir.path().join(format!("r{i}.csv"));
        let out = aipcw(&["--threads", threads, "simulate", "--config", &config, "--output", report.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        csvs.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn simulate_overrides_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "study.toml", SMOKE);
    let out = aipcw(&["simulate", "--config", &config, "--estimators", "mple,ipcw-1", "--seed", "7", "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["seed"], 7);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "study.toml", "scenario = \"one\"\nn = 50\nreplications = 0\nestimators = [\"mple\"]\n");
    let out = aipcw(&["simulate", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replications"), "{}", stderr(&out));
}

#[test]
fn non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // every treated subject fails before any control: monotone likelihood
    let input = write(dir.path(), "sep.csv", "time,delta,group\n1,1,1\n2,1,1\n3,1,1\n4,1,0\n5,1,0\n6,1,0\n");
    let out = aipcw(&["fit", "--input", &input, "--estimators", "mple"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("converge"), "{}", stderr(&out));
}
