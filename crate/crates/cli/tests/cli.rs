use std::process::{Command, Output};

fn stochexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochexp"))
        .args(args)
        .env_remove("STOCHEXP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn catalog_lists_thirteen_models() {
    let o = stochexp(&["catalog", "list", "--json"]);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 13);
    assert!(stdout(&stochexp(&["catalog", "list"])).contains("bessel_counterexample"));
}

#[test]
fn help_exits_zero_and_bad_flag_exits_one() {
    assert_eq!(stochexp(&["--help"]).status.code(), Some(0));
    assert_eq!(stochexp(&["run", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn unknown_model_or_missing_seed_is_an_error() {
    assert_eq!(stochexp(&["run", "--model", "none", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(stochexp(&["run", "--model", "brownian_bridge", "--paths", "200"]).status.code(), Some(1));
}

#[test]
fn run_report_has_all_sections_and_is_reproducible() {
    let args = ["run", "--model", "brownian_bridge", "--paths", "500", "--dt", "0.01", "--seed", "7", "--no-timestamp"];
    let a = stochexp(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    for key in ["config", "conditions", "ez", "ladder", "ui_diagnostic", "girsanov", "verdict"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "2"]);
    assert_eq!(a.stdout, stochexp(&with_workers).stdout);
}

#[test]
fn seed_falls_back_to_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_stochexp"))
        .args(["run", "--model", "cev", "--paths", "200", "--dt", "0.01", "--no-girsanov", "--no-timestamp"])
        .env("STOCHEXP_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["config"]["seed"], 11);
}

#[test]
fn check_reports_failure_for_bessel() {
    let o = stochexp(&["check", "--model", "bessel_counterexample"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["overall"], "fail");
}

#[test]
fn out_file_receives_the_report() {
    let dir = std::env::temp_dir().join(format!("stochexp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("r.json");
    let o = stochexp(&[
        "run", "--model", "pure_jump_iid", "--paths", "300", "--dt", "0.01", "--seed", "3", "--no-girsanov",
        "--out", out.to_str().unwrap(), "--csv-paths", dir.to_str().unwrap(), "--csv-count", "2",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("E z_T"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.get("runtime").is_some());
    assert!(dir.join("path_0.csv").exists() && dir.join("path_1.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}
