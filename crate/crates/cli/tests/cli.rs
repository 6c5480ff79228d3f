use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn m2d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2d"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = m2d(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small SBM plus a GCN teacher under `dir`.
fn small_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let teacher = dir.join("teacher");
    ok(&["generate-sbm", "--n", "160", "--blocks", "96,64", "--intra-p", "0.1", "--seed", "3", "--out", p(&data)]);
    ok(&["train-teacher", "--model", "gcn", "--data", p(&data), "--epochs", "60", "--seed", "1", "--out", p(&teacher)]);
    (data, teacher)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = m2d(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_or_flag_exits_1() {
    assert_eq!(m2d(&["bogus"]).status.code(), Some(1));
    assert_eq!(m2d(&["distill", "--nope", "1"]).status.code(), Some(1));
    assert_eq!(m2d(&["gradcheck", "--module", "everything"]).status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    assert_eq!(m2d(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_sbm_is_bit_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["generate-sbm", "--seed", "7", "--out", p(dir)]);
    }
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert!(fa.len() >= 6);
    // the resolved configs differ only in the output path
    let strip = |files: Vec<(String, Vec<u8>)>| files.into_iter().filter(|(n, _)| n != "resolved_config.json").collect::<Vec<_>>();
    assert_eq!(strip(fa), strip(fb));
    let stats = json(&a.join("metrics.json"));
    assert_eq!(stats["n"], 1000);
    assert_eq!(stats["block_sizes"], serde_json::json!([600, 400]));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 100, "block-sizes": [50, 50], "seed": 3, "p-bias": 0.6}"#).unwrap();
    let out = tmp.path().join("d");
    ok(&["generate-sbm", "--config", p(&cfg), "--seed", "4", "--out", p(&out)]);
    let resolved = json(&out.join("resolved_config.json"));
    assert_eq!(resolved["seed"], 4);
    assert_eq!(resolved["p-bias"], 0.6);
    assert_eq!(resolved["n"], 100);
    assert_eq!(resolved["intra-p"], 0.05);
    assert_eq!(json(&out.join("metrics.json"))["n"], 100);

    fs::write(&cfg, r#"{"n": 100, "colour": "red"}"#).unwrap();
    assert_eq!(m2d(&["generate-sbm", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn explicit_inter_p_disables_tuning() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    ok(&["generate-sbm", "--n", "100", "--blocks", "50,50", "--inter-p", "0.02", "--out", p(&out)]);
    assert_eq!(json(&out.join("resolved_config.json"))["target-assortativity"], Value::Null);
    assert_eq!(json(&out.join("metrics.json"))["inter_p"], 0.02);
}

#[test]
fn missing_required_path_and_inconsistent_config_exit_1() {
    assert_eq!(m2d(&["generate-sbm"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    assert_eq!(m2d(&["generate-sbm", "--n", "10", "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = tmp.path().join("t");
    let code = m2d(&["train-teacher", "--data", p(&missing), "--out", p(&out)]).status.code();
    assert_eq!(code, Some(2));
    assert!(out.join("resolved_config.json").is_file());
}

#[test]
fn plain_distillation_without_teacher_term_matches_teacher_training() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, teacher) = small_setup(tmp.path());
    let student = tmp.path().join("gcn");
    ok(&["train-teacher", "--model", "gcn", "--data", p(&data), "--seed", "5", "--out", p(&student)]);
    let run = tmp.path().join("none");
    ok(&[
        "distill", "--data", p(&data), "--teacher", p(&teacher), "--variant", "none", "--lambda-dis", "0", "--seed", "5", "--out", p(&run),
    ]);
    assert_eq!(json(&run.join("metrics.json"))["accuracy"], json(&student.join("metrics.json"))["accuracy"]);
    assert_eq!(fs::read(run.join("student_logits.csv")).unwrap(), fs::read(student.join("teacher_logits.csv")).unwrap());
}

#[test]
fn rerun_from_resolved_config_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, teacher) = small_setup(tmp.path());
    let first = tmp.path().join("first");
    ok(&[
        "distill", "--data", p(&data), "--teacher", p(&teacher), "--variant", "both", "--t-max", "3", "--seed", "2", "--out", p(&first),
    ]);
    let second = tmp.path().join("second");
    ok(&["distill", "--config", p(&first.join("resolved_config.json")), "--out", p(&second)]);
    assert_eq!(fs::read(first.join("metrics.json")).unwrap(), fs::read(second.join("metrics.json")).unwrap());
    assert_eq!(fs::read(first.join("student_logits.csv")).unwrap(), fs::read(second.join("student_logits.csv")).unwrap());
    let resolved = json(&first.join("resolved_config.json"));
    for key in ["variant", "d-f", "gamma-blend", "tau", "lambda-dis", "t-max", "seed", "data", "teacher"] {
        assert!(!resolved[key].is_null(), "{key}");
    }
}

#[test]
fn seeds_run_sequentially_with_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, teacher) = small_setup(tmp.path());
    let out = tmp.path().join("runs");
    ok(&[
        "distill", "--data", p(&data), "--teacher", p(&teacher), "--variant", "feat", "--t-max", "2", "--seeds", "1,2", "--out", p(&out),
    ]);
    let summary = json(&out.join("metrics.json"));
    assert_eq!(summary["seeds"], serde_json::json!([1, 2]));
    let runs = summary["runs"].as_array().unwrap();
    let accs: Vec<f64> = runs.iter().map(|r| r["accuracy"].as_f64().unwrap()).collect();
    assert!((summary["accuracy"]["mean"].as_f64().unwrap() - (accs[0] + accs[1]) / 2.0).abs() < 1e-15);
    for s in [1, 2] {
        let dir = out.join(format!("seed-{s}"));
        assert_eq!(json(&dir.join("resolved_config.json"))["seed"], s);
        assert!(dir.join("augmented").join("features.csv").is_file());
    }
}

#[test]
fn evaluate_and_audit_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["generate-sbm", "--n", "120", "--blocks", "72,48", "--intra-p", "0.12", "--seed", "1", "--out", p(&data)]);
    let teacher = tmp.path().join("gat");
    ok(&["train-teacher", "--model", "gat", "--data", p(&data), "--epochs", "30", "--out", p(&teacher)]);
    for name in ["teacher_logits.csv", "attention_layer1.csv", "attention_heads_layer1.csv", "history.json", "metrics.json"] {
        assert!(teacher.join(name).is_file(), "{name}");
    }
    let run = tmp.path().join("run");
    ok(&["distill", "--data", p(&data), "--teacher", p(&teacher), "--variant", "both", "--t-max", "2", "--out", p(&run)]);

    ok(&["evaluate", "--data", p(&data), "--run", p(&run), "--teacher", p(&teacher)]);
    let eval = json(&run.join("evaluation").join("metrics.json"));
    let distilled = json(&run.join("metrics.json"));
    assert_eq!(eval["accuracy"], distilled["accuracy"]);
    assert_eq!(eval["fidelity"], distilled["fidelity"]);
    assert_eq!(eval["source"], "student_logits.csv");

    let audit = tmp.path().join("audit");
    ok(&["audit", "--data", p(&data), "--run", p(&run), "--teacher", p(&teacher), "--bins", "5", "--out", p(&audit)]);
    for name in ["bins.csv", "edge_diff.csv", "correlations.json", "features_scatter.csv", "graph.dot", "resolved_config.json"] {
        assert!(audit.join(name).is_file(), "{name}");
    }
    assert_eq!(json(&audit.join("metrics.json"))["attention_order_holds"], true);
    assert_eq!(json(&audit.join("resolved_config.json"))["bins"], 5);

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(m2d(&["evaluate", "--data", p(&data), "--run", p(&empty)]).status.code(), Some(2));
}

#[test]
fn gradcheck_reports_every_case() {
    let tmp = tempfile::tempdir().unwrap();
    let out = m2d(&["gradcheck", "--module", "models", "--out", p(tmp.path())]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    assert_eq!(json(&tmp.path().join("metrics.json")).as_array().unwrap().len(), 5);
}
