use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncgp::fit::{load_trajectories, save_trajectories};
use ncgp::predict::split_indices;
use serde_json::Value;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn ncgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncgp"))
        .args(args)
        .current_dir(manifest_dir())
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = ncgp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// One invocation per subcommand; outputs are compared byte for byte with `tests/golden`.
const GOLDEN: &[(&str, &[&str])] = &[
    ("synth", &["synth", "--seed", "3", "--prototypes", "2", "--per-prototype", "3", "--n", "6"]),
    (
        "fit",
        &["fit", "--data", "tests/fixtures/small.csv", "--k", "2", "--degree", "3", "--seed", "3", "--restarts", "1"],
    ),
    ("gram", &["gram", "--kernel", "linear", "--sigma", "0.5", "--sigma-b", "0.5", "--c", "0.5", "--n", "5"]),
    ("sample", &["sample", "--preset", "tapered9", "--n", "5", "--count", "3", "--seed", "9"]),
    ("predict", &["predict", "--model", "tests/fixtures/model.json", "--n", "5"]),
    (
        "refine",
        &[
            "refine", "--model", "tests/fixtures/model.json", "--data", "tests/fixtures/small.csv",
            "--n-in", "3", "--plan", "1,2", "--traj", "p0-0",
        ],
    ),
    (
        "update",
        &[
            "update", "--model", "tests/fixtures/model.json", "--data", "tests/fixtures/small.csv",
            "--n-in", "3", "--traj", "p1-1", "--at", "4",
        ],
    ),
    (
        "bench",
        &[
            "bench", "--prototypes", "2", "--per-prototype", "6", "--n", "8", "--n-in", "4", "--k", "2",
            "--degree", "3", "--restarts", "1", "--seed", "4",
        ],
    ),
];

#[test]
fn golden_outputs_are_byte_identical() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, args) in GOLDEN {
        let first = stdout_ok(args);
        let second = stdout_ok(args);
        assert_eq!(first, second, "{name}: rerun differs");
        let path = manifest_dir().join("tests/golden").join(format!("{name}.txt"));
        if update {
            std::fs::write(&path, &first).unwrap();
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(first, golden, "{name}: differs from {}", path.display());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    for (name, args) in GOLDEN {
        let mut one = vec!["--threads", "1"];
        one.extend_from_slice(args);
        let mut four = vec!["--threads", "4"];
        four.extend_from_slice(args);
        assert_eq!(stdout_ok(&one), stdout_ok(&four), "{name}");
    }
}

fn schema_validator(name: &str) -> jsonschema::Validator {
    let path = manifest_dir().join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("valid schema")
}

#[test]
fn json_output_matches_schemas() {
    for (name, args) in GOLDEN {
        let mut with_json = vec!["--json"];
        with_json.extend_from_slice(args);
        let doc: Value = serde_json::from_str(&stdout_ok(&with_json)).unwrap();
        let v = schema_validator(name);
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
        assert_eq!(doc["command"], *name);
    }
}

#[test]
fn schemas_reject_wrong_documents() {
    let v = schema_validator("gram");
    assert!(!v.is_valid(&serde_json::json!({"command": "gram"})));
    let v = schema_validator("fit");
    assert!(!v.is_valid(&serde_json::json!({"command": "synth"})));
}

#[test]
fn malformed_csv_exits_three_with_line() {
    let out = ncgp(&["fit", "--data", "tests/fixtures/malformed.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(ncgp(&["gram", "--kernel", "rbf", "--length-scale", "0"]).status.code(), Some(2));
    assert_eq!(ncgp(&["sample", "--n", "5"]).status.code(), Some(2));
    assert_eq!(ncgp(&["predict", "--model", "missing.json"]).status.code(), Some(3));
    assert_eq!(
        ncgp(&["synth", "--seed", "1", "--out", "/nonexistent-dir/x.csv"]).status.code(),
        Some(3)
    );
    // K larger than the dataset is a numeric failure, not a usage error
    assert_eq!(
        ncgp(&["fit", "--data", "tests/fixtures/small.csv", "--k", "20", "--seed", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(ncgp(&["--help"]).status.code(), Some(0));
}

#[test]
fn gram_rbf_paper_parameters() {
    let csv = stdout_ok(&["gram", "--kernel", "rbf", "--sigma", "1", "--length-scale", "0.25", "--n", "20"]);
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 20);
        assert_eq!(r[i], 1.0);
    }
}

#[test]
fn gram_from_single_component_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("one.json");
    let data = manifest_dir().join("tests/fixtures/small.csv");
    stdout_ok(&[
        "fit", "--data", data.to_str().unwrap(), "--k", "1", "--degree", "2", "--seed", "1",
        "--restarts", "1", "--out", model.to_str().unwrap(),
    ]);
    let csv = stdout_ok(&["gram", "--kernel", "ncurve", "--model", model.to_str().unwrap(), "--n", "20"]);
    // d = 2, so 40 rows plus the header
    assert_eq!(csv.lines().count(), 41);
}

fn write_subset(dir: &Path, name: &str, data: &[ncgp::fit::Trajectory], idx: &[usize]) -> PathBuf {
    let subset: Vec<_> = idx.iter().map(|&i| data[i].clone()).collect();
    let path = dir.join(name);
    save_trajectories(&path, &subset).unwrap();
    path
}

#[test]
fn fit_then_refine_reproduces_benchmark_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.csv");
    let seed = "11";
    stdout_ok(&[
        "synth", "--seed", seed, "--prototypes", "2", "--per-prototype", "8", "--n", "10",
        "--out", data_path.to_str().unwrap(),
    ]);
    let fit_flags = ["--k", "2", "--degree", "3", "--restarts", "2", "--seed", seed];
    let mut bench = vec!["--json", "bench", "--data", data_path.to_str().unwrap(), "--n-in", "5"];
    bench.extend_from_slice(&fit_flags);
    let report: Value = serde_json::from_str(&stdout_ok(&bench)).unwrap();

    let data = load_trajectories(&data_path).unwrap();
    let (train, test) = split_indices(data.len(), 11);
    let train_path = write_subset(dir.path(), "train.csv", &data, &train);
    let test_path = write_subset(dir.path(), "test.csv", &data, &test);
    let model = dir.path().join("model.json");
    let mut fit = vec!["fit", "--data", train_path.to_str().unwrap(), "--out", model.to_str().unwrap()];
    fit.extend_from_slice(&fit_flags);
    stdout_ok(&fit);

    let details = report["details"].as_array().unwrap();
    let row = |traj: &str, plan: &str| {
        details
            .iter()
            .find(|r| r["traj_id"] == traj && r["plan"] == plan)
            .unwrap()
            .clone()
    };
    // n_in = 5: posterior A observes {4}, posterior B observes {3, 4}
    for (plan_name, steps) in [("posteriorA", "4"), ("posteriorB", "3,4")] {
        let refined: Value = serde_json::from_str(&stdout_ok(&[
            "--json", "refine", "--model", model.to_str().unwrap(), "--data",
            test_path.to_str().unwrap(), "--n-in", "5", "--plan", steps,
        ]))
        .unwrap();
        for r in refined["results"].as_array().unwrap() {
            let id = r["traj_id"].as_str().unwrap();
            let b = row(id, plan_name);
            for key in ["ade_in", "ade_pred", "nll_in", "nll_pred"] {
                assert_eq!(r[key], b[key], "{id} {plan_name} {key}");
            }
        }
    }
    let prior: Value = serde_json::from_str(&stdout_ok(&[
        "--json", "predict", "--model", model.to_str().unwrap(), "--data", test_path.to_str().unwrap(),
        "--n-in", "5",
    ]))
    .unwrap();
    for r in prior["scores"].as_array().unwrap() {
        let b = row(r["traj_id"].as_str().unwrap(), "prior");
        for key in ["ade_in", "ade_pred", "nll_in", "nll_pred"] {
            assert_eq!(r[key], b[key]);
        }
    }
}

#[test]
fn refine_plan_3_7_equals_posterior_b() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.csv");
    stdout_ok(&[
        "synth", "--seed", "5", "--prototypes", "2", "--per-prototype", "6", "--n", "20",
        "--out", data_path.to_str().unwrap(),
    ]);
    let fit_flags = ["--k", "2", "--degree", "4", "--restarts", "1", "--seed", "5"];
    let mut bench = vec!["--json", "bench", "--data", data_path.to_str().unwrap(), "--n-in", "8"];
    bench.extend_from_slice(&fit_flags);
    let report: Value = serde_json::from_str(&stdout_ok(&bench)).unwrap();
    let b_plan = report["plans"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "posteriorB")
        .unwrap()["plan"]["steps"]
        .clone();
    assert_eq!(b_plan, serde_json::json!([3, 7]));

    let data = load_trajectories(&data_path).unwrap();
    let (train, test) = split_indices(data.len(), 5);
    let train_path = write_subset(dir.path(), "train.csv", &data, &train);
    let test_path = write_subset(dir.path(), "test.csv", &data, &test);
    let model = dir.path().join("model.json");
    let mut fit = vec!["fit", "--data", train_path.to_str().unwrap(), "--out", model.to_str().unwrap()];
    fit.extend_from_slice(&fit_flags);
    stdout_ok(&fit);
    let refined: Value = serde_json::from_str(&stdout_ok(&[
        "--json", "refine", "--model", model.to_str().unwrap(), "--data", test_path.to_str().unwrap(),
        "--plan", "3,7",
    ]))
    .unwrap();
    let details = report["details"].as_array().unwrap();
    for r in refined["results"].as_array().unwrap() {
        let b = details
            .iter()
            .find(|d| d["traj_id"] == r["traj_id"] && d["plan"] == "posteriorB")
            .unwrap();
        for key in ["ade_in", "ade_pred", "nll_in", "nll_pred"] {
            assert_eq!(r[key], b[key]);
        }
    }
}

#[test]
fn outputs_written_to_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let json = stdout_ok(&[
        "--json", "gram", "--kernel", "rbf", "--n", "4", "--normalize", "--out", csv.to_str().unwrap(),
    ]);
    let doc: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["normalized"], true);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,0,0.3333333333333333,0.6666666666666666,1\n"));

    let report = dir.path().join("r.json");
    let details = dir.path().join("d.csv");
    let table = stdout_ok(&[
        "bench", "--prototypes", "2", "--per-prototype", "6", "--n", "8", "--n-in", "4", "--k", "2",
        "--degree", "3", "--restarts", "1", "--seed", "4", "--report", report.to_str().unwrap(),
        "--details", details.to_str().unwrap(),
    ]);
    assert!(table.starts_with("plan"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(schema_validator("bench").is_valid(&doc));
    let d = std::fs::read_to_string(&details).unwrap();
    assert!(d.starts_with("traj_id,plan,ade_in,ade_pred,nll_in,nll_pred\n"));
}
