//! End-to-end runs of the `wlab` binary: exit codes, output files and the
//! thread-count plumbing.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn wlab(dir: &Path, config: Option<&Value>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wlab"));
    cmd.env_remove("WLAB_THREADS").arg("--out").arg(dir.join("out"));
    if let Some(config) = config {
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&fs::read(dir.join("out").join(name)).unwrap()).unwrap()
}

fn written(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir.join("out")) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn constants_of_unit_weight_are_one() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "window": {"n": 1, "K": 2, "L": 2},
        "exponents": {"p_list": [2.0]},
        "weights": [{"kind": "ones"}],
        "rh_s": 2.0
    });
    let out = wlab(dir.path(), Some(&config), &["constants"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(dir.path(), "constants.json");
    let values = report["weights"][0]["values"].as_object().unwrap();
    assert!(values.len() >= 8);
    for (name, v) in values {
        assert!((v.as_f64().unwrap() - 1.0).abs() <= 1e-12, "{name} = {v}");
    }
}

#[test]
fn constants_of_two_step_weight() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "window": {"n": 1, "K": 0, "L": 0},
        "exponents": {"p_list": [2.0]},
        "weights": [{"kind": "step", "values": [1.0, 2.0]}]
    });
    let out = wlab(dir.path(), Some(&config), &["constants"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let values = read_json(dir.path(), "constants.json")["weights"][0]["values"].clone();
    assert!((values["a1"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    let bracket = values["apr_bracket_2"].as_f64().unwrap();
    let double = values["apr_double_2"].as_f64().unwrap();
    assert!(bracket <= double * (1.0 + 1e-12));
    assert!(double <= 2.0 * bracket * (1.0 + 1e-12));
}

#[test]
fn constants_without_exponent_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "window": {"n": 1, "K": 2, "L": 2},
        "weights": [{"kind": "step", "values": [1.0, 2.0]}]
    });
    let out = wlab(dir.path(), Some(&config), &["constants"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("exponents.p_list"));
    assert!(written(dir.path()).is_empty());
}

#[test]
fn bundled_suite_passes() {
    let dir = TempDir::new().unwrap();
    let out = wlab(dir.path(), None, &["verify", "--suite", "paper-core"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let mut files = written(dir.path());
    files.sort();
    assert_eq!(files, ["report.csv", "report.json"]);
    let report = read_json(dir.path(), "report.json");
    assert_eq!(report["pass"], json!(true));
    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(csv.starts_with("theorem,input_id,lhs,rhs,ratio,empirical_C,theoretical_log10_C,pass\n"));
}

#[test]
fn corrupted_constant_is_a_violation() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "id": "corrupted",
        "theorem": "multilinear_characterization",
        "window": {"n": 1, "K": 2, "L": 3},
        "exponents": {"p_list": [1.0, 2.0]},
        "weights": [{"kind": "step", "values": [1.0, 3.0]}, {"kind": "step", "values": [2.0, 1.0]}],
        "families": ["dyadic_union", "indicator"],
        "samples": 4,
        "theoretical_log10_offset": -100.0
    });
    let out = wlab(dir.path(), Some(&config), &["verify"]);
    assert_eq!(code(&out), 1);
    let violations = read_json(dir.path(), "violations.json");
    assert_eq!(violations["kind"], json!("VIOLATION"));
    let failing = violations["experiments"].as_array().unwrap();
    assert_eq!(failing.len(), 1);
    assert_eq!(failing[0]["spec"]["theoretical_log10_offset"], json!(-100.0));
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn unknown_theorem_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let config = json!({"theorem": "fermat", "exponents": {"p_list": [2.0]}, "weights": [{"kind": "ones"}]});
    let out = wlab(dir.path(), Some(&config), &["verify"]);
    assert_eq!(code(&out), 2);
    assert!(written(dir.path()).is_empty());
}

fn search_config(family: Value, budget: usize) -> Value {
    json!({
        "objective": {"kind": "sawyer"},
        "family": family,
        "window": {"n": 1, "K": 1, "L": 3},
        "exponents": {"p_list": [2.0]},
        "samples": 4,
        "budget": budget,
        "restarts": 2,
        "seed": 5
    })
}

#[test]
fn zero_dimensional_search_evaluates_once() {
    let dir = TempDir::new().unwrap();
    let out = wlab(dir.path(), Some(&search_config(json!({"kind": "ones"}), 60)), &["search"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result = read_json(dir.path(), "search.json");
    assert_eq!(result["trace"].as_array().unwrap().len(), 1);
    assert!(result["best_params"].as_array().unwrap().is_empty());
    let trace = fs::read_to_string(dir.path().join("out/search_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn search_is_reproducible_across_runs_and_threads() {
    let config = search_config(json!({"kind": "power"}), 60);
    let run = |extra: &[&str], env: Option<&str>| {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, serde_json::to_vec(&config).unwrap()).unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_wlab"));
        cmd.env_remove("WLAB_THREADS");
        if let Some(t) = env {
            cmd.env("WLAB_THREADS", t);
        }
        let out = cmd.arg("--out").arg(dir.path()).arg("--config").arg(&path).args(extra).arg("search").output().unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join("search.json")).unwrap()
    };
    let first = run(&["--threads", "1"], None);
    assert_eq!(first, run(&["--threads", "1"], None));
    assert_eq!(first, run(&[], Some("3")));
    assert_eq!(first, run(&["--threads", "4"], Some("1")));
}

#[test]
fn search_with_zero_budget_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = wlab(dir.path(), Some(&search_config(json!({"kind": "power"}), 0)), &["search"]);
    assert_eq!(code(&out), 2);
    assert!(written(dir.path()).is_empty());
}

#[test]
fn invalid_thread_counts_are_rejected() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wlab"))
        .env("WLAB_THREADS", "many")
        .args(["verify", "--suite", "paper-core"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = wlab(dir.path(), None, &["--threads", "0", "verify", "--suite", "paper-core"]);
    assert_eq!(code(&out), 2);
    assert!(written(dir.path()).is_empty());
}

#[test]
fn scan_writes_gap_table() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "theorem": "sawyer",
        "exponent_grid": [[1.5], [2.0]],
        "families": [{"name": "step", "weights": [{"kind": "step", "values": [1.0, 4.0]}]}],
        "window": {"n": 1, "K": 1, "L": 3},
        "samples": 4
    });
    let out = wlab(dir.path(), Some(&config), &["scan"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("theorem,family,p_list,empirical_C,theoretical_log10_C,log10_gap"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn bad_flag_value_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = wlab(dir.path(), None, &["--dim", "3", "verify", "--suite", "paper-core"]);
    assert_eq!(code(&out), 2);
}
