//! The `fracperc` binary: exit codes, output files, the output-directory
//! override, and conformance of written records to the shipped schema.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fracperc"));
    c.env_remove("FRACPERC_OUT_DIR");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/result_record.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).expect("schema compiles")
}

fn assert_conforms(v: &Value, schema: &jsonschema::Validator) {
    let records = match v {
        Value::Array(items) => items.clone(),
        other => vec![other.clone()],
    };
    for r in records {
        let errors: Vec<String> = schema.iter_errors(&r).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", r["experiment"]);
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn theta_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["theta", "--N", "2", "--d", "2", "--k", "1", "--p", "0.5", "--trials", "20000", "--seed", "7", "--out", "res"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = read_json(&dir.path().join("res/theta.json"));
    assert_eq!(json["experiment"], "theta");
    assert_eq!(json["spec"]["seed"], "7");
    let p_hat = json["payload"]["estimate"]["p_hat"].as_f64().unwrap();
    assert!((p_hat - 0.4375).abs() < 0.015, "{p_hat}");

    let mut rdr = csv::Reader::from_path(dir.path().join("res/theta.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "point");
    assert!(headers.iter().any(|h| h == "p_hat"));
    assert_eq!(rdr.records().count(), 1);
}

#[test]
fn sweep_writes_one_record_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["phi", "--N", "8", "--p", "0.4,0.6,0.8", "--trials", "300", "--format", "json", "--out", "."],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = read_json(&dir.path().join("phi.json"));
    let items = json.as_array().expect("sweep writes an array");
    assert_eq!(items.len(), 3);
    for (i, r) in items.iter().enumerate() {
        assert_eq!(r["sweep"]["key"], "p");
        assert_eq!(r["sweep"]["index"], i);
    }
    assert!(!dir.path().join("phi.csv").exists());
}

#[test]
fn env_var_moves_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = bin()
        .current_dir(dir.path())
        .env("FRACPERC_OUT_DIR", &target)
        .args(["bounds", "--N", "4096", "--m", "1", "--delta1", "0.0003"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("bounds.json").exists());
    assert!(target.join("bounds.csv").exists());
    assert!(!dir.path().join("results").exists());
}

#[test]
fn default_output_directory_is_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["bounds", "--N", "4096", "--m", "1", "--delta1", "0.0003", "--format", "csv"]);
    assert!(out.status.success());
    assert!(dir.path().join("results/bounds.csv").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["theta", "--N", "2", "--k", "1", "--p", "0.5", "--bogus", "1"][..],
        &["nosuch"][..],
        &["theta", "--N", "2", "--k", "1"][..],
        &["theta", "--N", "2,3", "--k", "1,2", "--p", "0.5"][..],
    ] {
        let out = run_in(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn invalid_parameters_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["theta", "--N", "2", "--k", "1", "--p", "1.5", "--out", "."]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_experiment_conforms_to_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema();
    let cases: &[&[&str]] = &[
        &["theta", "--N", "2", "--k", "2", "--p", "0.8", "--trials", "200"],
        &["sheet", "--N", "2", "--k", "2", "--p", "0.9", "--trials", "100"],
        &["phi", "--N", "8", "--p", "0.6", "--s", "0.5", "--trials", "100"],
        &["psi", "--N", "8", "--p", "0.4", "--s", "0.5", "--trials", "100"],
        &["enhance", "--N", "8", "--p", "0.5", "--s", "0.3", "--trials", "50"],
        &["diminish", "--N", "8", "--p", "0.5", "--s", "0.3", "--trials", "50"],
        &["pc", "--target", "theta", "--N", "2", "--k", "2", "--trials", "200", "--max_trials", "400", "--tol", "0.01"],
        &["corrlen", "--p", "0.7", "--delta", "0.2", "--max_N", "32", "--trials", "100"],
        &[
            "scaling", "--N", "2,3,4,5", "--k", "2", "--lattice_N", "16", "--trials", "100", "--max_trials", "200",
            "--tol", "0.01",
        ],
        &["bounds", "--N", "64", "--m", "3", "--p", "0.9", "--b1_trials", "200"],
        &["couple", "--N", "2", "--k", "1", "--p", "0.7,0.9", "--trials", "100"],
        &["validate"],
        &["theta", "--N", "2", "--k", "1", "--p", "0.3:0.5:0.1", "--trials", "100"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let out_dir = format!("o{i}");
        let mut full = args.to_vec();
        full.extend(["--out", &out_dir, "--format", "json"]);
        let out = run_in(dir.path(), &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let json = read_json(&dir.path().join(&out_dir).join(format!("{}.json", args[0])));
        assert_conforms(&json, &schema);
    }
}

#[test]
fn schema_rejects_a_malformed_record() {
    let schema = schema();
    let bad = serde_json::json!({
        "schema_version": 1,
        "experiment": "theta",
        "spec": {"seed": "1", "threads": "1"},
        "sweep": null,
        "build": "x",
        "threads": 1,
        "wall_time_s": 0.1,
        "payload": {"p": 0.5}
    });
    assert!(!schema.is_valid(&bad));
}
