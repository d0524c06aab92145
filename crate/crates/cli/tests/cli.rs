//! End-to-end tests of the `relfair` binary: artifact layout, schema
//! conformance, byte-identical replay, worker-count invariance, and the
//! documented error paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relfair"))
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn classification_config(seed: u64, variant: &str, phi: Value) -> Value {
    json!({
        "version": 1,
        "name": format!("{variant}-test"),
        "dataset": {
            "source": "synth-classification",
            "samples": 400,
            "features": 4,
            "classes": 3,
            "separation": 1.2
        },
        "partition": {"by": "dirichlet", "n_clients": 8, "concentration": 0.5},
        "loss": {"kind": "multinomial-logistic", "classes": 3, "regularizer": 1e-3},
        "algorithm": {"variant": variant, "rounds": 12, "local_steps": 3},
        "ambiguity": {"alpha_a": 0.25, "alpha_b": 0.25, "phi": phi},
        "schedule": {"mode": "fixed", "tau": 0.025, "sigma": 0.05, "eta": 0.01},
        "seed": seed
    })
}

fn regression_config(seed: u64) -> Value {
    json!({
        "version": 1,
        "name": "quad",
        "dataset": {
            "source": "synth-regression",
            "samples_per_client": 12,
            "ground_truths": [[1.0, 0.4], [0.2, -0.3], [0.8, 0.9]],
            "noise_sd": 0.3
        },
        "loss": {"kind": "quadratic-regression", "regularizer": 1e-3},
        "algorithm": {"variant": "scaff-pd-ia", "rounds": 40, "local_steps": 4},
        "ambiguity": {"alpha_a": 0.3333333333333333, "alpha_b": 0.3333333333333333, "phi": 0.1},
        "schedule": {"mode": "fixed", "tau": 0.1, "sigma": 0.05, "eta": 0.05},
        "seed": seed
    })
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn schema_validator(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(name);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, value: &Value, what: &str) {
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{what} violates its schema: {errors:?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_emits_schema_valid_artifacts() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "c.json",
        &classification_config(3, "scaff-pd-ia", json!(0.2)),
    );
    let out_dir = tmp.path().join("out");
    run_ok(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);

    for file in ["metrics.json", "lorenz.csv", "trajectory.csv", "manifest.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let metrics = read_json(&out_dir.join("metrics.json"));
    assert_valid(&schema_validator("metrics.schema.json"), &metrics, "metrics.json");
    assert_eq!(metrics["variant"], "scaff-pd-ia");
    assert_eq!(metrics["phi"], 0.2);
    assert!(metrics["accuracy"]["all"].as_f64().unwrap() > 0.3);

    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_valid(&schema_validator("manifest.schema.json"), &manifest, "manifest.json");
    assert_valid(
        &schema_validator("config.schema.json"),
        &manifest["config"],
        "embedded config",
    );

    // trajectory has one row per round plus a header
    let rows = std::fs::read_to_string(out_dir.join("trajectory.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 12 + 1);
}

#[test]
fn replay_is_byte_identical_and_worker_invariant() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "c.json",
        &classification_config(11, "scaff-pd-ia", json!(0.2)),
    );
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("out{i}"))).collect();
    run_ok(&["run", "--config", config.to_str().unwrap(), "--out", dirs[0].to_str().unwrap()]);
    run_ok(&["run", "--config", config.to_str().unwrap(), "--out", dirs[1].to_str().unwrap()]);
    run_ok(&[
        "--workers",
        "1",
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dirs[2].to_str().unwrap(),
    ]);
    for file in ["metrics.json", "lorenz.csv", "trajectory.csv"] {
        let a = std::fs::read(dirs[0].join(file)).unwrap();
        let b = std::fs::read(dirs[1].join(file)).unwrap();
        let c = std::fs::read(dirs[2].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs across identical runs");
        assert_eq!(a, c, "{file} differs across worker counts");
    }
}

#[test]
fn phi_auto_records_selection() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = regression_config(5);
    cfg["ambiguity"]["phi"] = json!("auto");
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out_dir = tmp.path().join("out");
    run_ok(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let metrics = read_json(&out_dir.join("metrics.json"));
    assert_eq!(metrics["phi_source"], "auto");
    let phi = metrics["phi"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&phi), "selected phi {phi}");
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["phi_source"], "auto");
    assert_eq!(manifest["config"]["ambiguity"]["phi"], "auto");
}

#[test]
fn compare_enforces_shared_partition() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(
        tmp.path(),
        "a.json",
        &classification_config(7, "scaff-pd", json!(0.0)),
    );
    let b = write_config(
        tmp.path(),
        "b.json",
        &classification_config(7, "scaff-pd-ia", json!(0.2)),
    );
    let out_dir = tmp.path().join("cmp");
    run_ok(&[
        "compare",
        "--config",
        a.to_str().unwrap(),
        "--config",
        b.to_str().unwrap(),
        "--seeds",
        "1,2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let report = read_json(&out_dir.join("comparison.json"));
    assert_valid(&schema_validator("comparison.schema.json"), &report, "comparison.json");
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4); // 2 configs x 2 seeds
    for seed_rows in rows.chunks(2) {
        assert_eq!(
            seed_rows[0]["partition_hash"], seed_rows[1]["partition_hash"],
            "compared rows must share the partition"
        );
    }
    assert!(out_dir.join("comparison.csv").exists());

    // mismatched client counts across configs is an error
    let mut other = classification_config(7, "scaff-pd-ia", json!(0.2));
    other["partition"]["n_clients"] = json!(5);
    let c = write_config(tmp.path(), "c.json", &other);
    let out = bin()
        .args([
            "compare",
            "--config",
            a.to_str().unwrap(),
            "--config",
            c.to_str().unwrap(),
            "--out",
            tmp.path().join("cmp2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("partition"), "unexpected error: {stderr}");
}

#[test]
fn exact_sweep_on_synthetic_regression() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = regression_config(9);
    cfg["dataset"]["noise_sd"] = json!(0.5);
    cfg["exact"] = json!({
        "grid": [
            {"lo": -0.5, "hi": 1.5, "step": 0.01},
            {"lo": -1.0, "hi": 1.5, "step": 0.01}
        ],
        "phi_values": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
    });
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out_dir = tmp.path().join("out");
    run_ok(&["exact", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let summary = read_json(&out_dir.join("exact.json"));
    assert_valid(&schema_validator("exact.schema.json"), &summary, "exact.json");
    assert_eq!(summary["r_ab"].as_array().unwrap().len(), 6);
    let sweep = std::fs::read_to_string(out_dir.join("phi_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 7);
    assert!(sweep.lines().next().unwrap().starts_with("phi,theta_0,theta_1,value,r_ab"));
}

#[test]
fn metrics_subcommand_examples() {
    let tmp = TempDir::new().unwrap();
    let equal = tmp.path().join("equal.csv");
    std::fs::write(&equal, "loss\n2.0\n2.0\n2.0\n2.0\n2.0\n").unwrap();
    let out_dir = tmp.path().join("m1");
    let out = run_ok(&[
        "metrics",
        "--losses",
        equal.to_str().unwrap(),
        "--alpha-a",
        "0.2",
        "--alpha-b",
        "0.2",
        "--phi",
        "0.0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let payload: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&schema_validator("metrics.schema.json"), &payload, "metrics stdout");
    assert_eq!(payload["fairness"]["r_ab"], 1.0);
    assert_eq!(payload["fairness"]["gini"], 0.0);
    assert_eq!(payload["fairness"]["ratio_2020"], 1.0);
    assert_eq!(payload["fairness"]["atkinson_inf"], 0.0);
    assert!(out_dir.join("lorenz.csv").exists());

    // two-loss file (0, 1): gini exactly 1/2
    let two = tmp.path().join("two.csv");
    std::fs::write(&two, "loss\n0.0\n1.0\n").unwrap();
    let out = run_ok(&[
        "metrics",
        "--losses",
        two.to_str().unwrap(),
        "--alpha-a",
        "1.0",
        "--alpha-b",
        "1.0",
        "--phi",
        "0.0",
    ]);
    let payload: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["fairness"]["gini"], 0.5);
}

#[test]
fn validate_config_paths() {
    let tmp = TempDir::new().unwrap();
    let good = write_config(
        tmp.path(),
        "good.json",
        &classification_config(1, "scaff-pd-ia", json!(0.2)),
    );
    run_ok(&["validate-config", "--config", good.to_str().unwrap()]);

    let mut bad_value = classification_config(1, "scaff-pd-ia", json!(0.2));
    bad_value["ambiguity"]["alpha_a"] = json!(2.0);
    bad_value["split_fraction"] = json!(1.5);
    let bad = write_config(tmp.path(), "bad.json", &bad_value);
    let out = bin()
        .args(["validate-config", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ambiguity.alpha_a"), "{stderr}");
    assert!(stderr.contains("split_fraction"), "{stderr}");
}

#[test]
fn csv_dataset_with_client_column_round_trip() {
    // A small three-client regression table driven through `run`.
    let tmp = TempDir::new().unwrap();
    let csv_path = tmp.path().join("clients.csv");
    let mut body = String::from("x1,x2,y,client\n");
    let truths = [(1.0, 0.5), (0.3, -0.2), (0.9, 1.1)];
    for (c, (a, b)) in truths.iter().enumerate() {
        for j in 0..10 {
            let x1 = (j as f64) / 10.0;
            let x2 = ((j * 7 % 10) as f64) / 10.0 - 0.5;
            let y = a * x1 + b * x2 + 0.05 * ((j % 3) as f64 - 1.0);
            body.push_str(&format!("{x1},{x2},{y},{c}\n"));
        }
    }
    std::fs::write(&csv_path, body).unwrap();
    let cfg = json!({
        "version": 1,
        "dataset": {
            "source": "csv",
            "path": csv_path.to_str().unwrap(),
            "schema": {
                "feature_columns": ["x1", "x2"],
                "label_column": "y",
                "client_column": "client",
                "add_intercept": true
            }
        },
        "loss": {"kind": "quadratic-regression", "regularizer": 1e-3},
        "algorithm": {"variant": "scaffold", "rounds": 20, "local_steps": 3},
        "ambiguity": {"alpha_a": 1.0, "alpha_b": 1.0, "phi": 0.0},
        "schedule": {"mode": "fixed", "tau": 0.2, "sigma": 0.01, "eta": 0.05},
        "split_fraction": 0.8,
        "seed": 2
    });
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out_dir = tmp.path().join("out");
    run_ok(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let metrics = read_json(&out_dir.join("metrics.json"));
    assert_eq!(metrics["val_losses"].as_array().unwrap().len(), 3);
    assert!(metrics["accuracy"].is_null());
}
