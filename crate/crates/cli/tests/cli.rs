use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steerlabel"))
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/demo_seed7")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json_line(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("last line is not JSON ({e}): {stdout}"))
}

fn full_demo(out: &Path, threads: &str) {
    let o = bin()
        .args(["full", "--config"])
        .arg(demo_config())
        .args(["--seed", "7", "--threads", threads, "--out"])
        .arg(out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 + 1e-7 * a.abs().max(b.abs())
}

fn same_json(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => close(x.as_f64().unwrap(), y.as_f64().unwrap()),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(x, y)| same_json(x, y)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same_json(v, w)))
        }
        _ => a == b,
    }
}

fn assert_csv_matches(actual: &Path, golden: &Path) {
    let a = fs::read_to_string(actual).unwrap();
    let g = fs::read_to_string(golden).unwrap();
    assert_eq!(a.lines().count(), g.lines().count(), "{}", actual.display());
    for (n, (la, lg)) in a.lines().zip(g.lines()).enumerate() {
        for (fa, fg) in la.split(',').zip(lg.split(',')) {
            let ok = match (fa.parse::<f64>(), fg.parse::<f64>()) {
                (Ok(x), Ok(y)) => close(x, y),
                _ => fa == fg,
            };
            assert!(ok, "{} line {}: `{la}` vs golden `{lg}`", actual.display(), n + 1);
        }
    }
}

#[test]
fn version_names_schema() {
    let o = run(&["--version"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.contains(env!("CARGO_PKG_VERSION")) && text.contains("config schema 1"),
        "{text}"
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["label", "--k", "two"]).status.code(), Some(1));
    let o = run(&["label", "--set", "pipeline.nope=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pipeline.nope"));
    assert_eq!(run(&["full"]).status.code(), Some(1), "full without --out");
}

#[test]
fn full_demo_matches_golden_outputs() {
    let dir = tempfile::tempdir().unwrap();
    full_demo(dir.path(), "1");
    let golden = golden_dir();
    let files = ["labels_proposed.csv", "labels_pid.csv", "report.json"];
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for f in files {
            fs::copy(dir.path().join(f), golden.join(f)).unwrap();
        }
    }
    assert_csv_matches(&dir.path().join(files[0]), &golden.join(files[0]));
    assert_csv_matches(&dir.path().join(files[1]), &golden.join(files[1]));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(files[2])).unwrap()).unwrap();
    let expected: Value = serde_json::from_str(&fs::read_to_string(golden.join(files[2])).unwrap()).unwrap();
    assert!(
        same_json(&report, &expected),
        "report.json differs from golden:\n{report:#}"
    );
}

#[test]
fn full_demo_is_byte_identical_across_runs_and_thread_counts() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    full_demo(a.path(), "1");
    full_demo(b.path(), "1");
    full_demo(c.path(), "4");
    for f in [
        "labels_proposed.csv",
        "labels_pid.csv",
        "estimated_trajectory.jsonl",
        "report.json",
    ] {
        let reference = fs::read(a.path().join(f)).unwrap();
        assert_eq!(reference, fs::read(b.path().join(f)).unwrap(), "{f}");
        assert_eq!(reference, fs::read(c.path().join(f)).unwrap(), "{f} with 4 threads");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "full");
    assert_eq!(manifest["seeds"]["run"], 7);
    assert_eq!(manifest["config_schema_version"], 1);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 6);
    assert!(!a.path().join(".manifest.json.tmp").exists());
}

#[test]
fn smaller_interval_gives_lower_error_on_the_demo() {
    let mse = |k: &str| {
        let o = bin()
            .args(["label", "--config"])
            .arg(demo_config())
            .args(["--seed", "7", "--k", k])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        json_line(&o)["results"][0]["report"]["mse"].as_f64().unwrap()
    };
    let (k1, k4) = (mse("1"), mse("4"));
    assert!(k1 < k4, "k=1 {k1} vs k=4 {k4}");
}

#[test]
fn stagewise_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let sim = run(&[
        "simulate",
        "--seed",
        "3",
        "--set",
        "simulator.frames=40",
        "--set",
        "pipeline.ply_format=ascii",
        "--out",
        &p("log"),
    ]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(json_line(&sim)["frames"], 40);
    assert!(dir.path().join("log/scans/scan_000039.ply").exists());

    let odo = run(&["odometry", "--log", &p("log"), "--out", &p("odo")]);
    assert!(odo.status.success(), "{}", String::from_utf8_lossy(&odo.stderr));
    assert!(json_line(&odo)["final_drift_m"].as_f64().unwrap() < 0.05);

    let injected = run(&[
        "label",
        "--trajectory",
        &p("odo/estimated_trajectory.jsonl"),
        "--ground-truth",
        &p("log/ground_truth.csv"),
        "--predictor",
        "both",
        "--out",
        &p("lab"),
    ]);
    assert!(
        injected.status.success(),
        "{}",
        String::from_utf8_lossy(&injected.stderr)
    );
    let from_log = run(&["label", "--log", &p("log")]);
    assert!(from_log.status.success());
    // The injected poses went through a quaternion round trip in the JSONL file.
    let a = &json_line(&injected)["results"][0]["report"]["mse"];
    assert!(same_json(a, &json_line(&from_log)["results"][0]["report"]["mse"]));

    let ev = run(&[
        "eval",
        "--labels",
        &p("lab/labels_pid.csv"),
        "--ground-truth",
        &p("log/ground_truth.csv"),
    ]);
    assert!(ev.status.success());
    assert_eq!(&json_line(&ev)["report"], &json_line(&injected)["results"][1]["report"]);
}

#[test]
fn eval_without_overlap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    let truth = dir.path().join("truth.csv");
    fs::write(
        &labels,
        "frame,timestamp,steering_pred_rad,wheel_angle_rad,radius_m,valid,source\n5,0.5,0.1,0.01,300,true,proposed\n",
    )
    .unwrap();
    fs::write(&truth, "frame,timestamp,steering_truth_rad\n0,0,0.1\n1,0.1,0.1\n").unwrap();
    let o = bin()
        .arg("eval")
        .arg("--labels")
        .arg(&labels)
        .arg("--ground-truth")
        .arg(&truth)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no frame") && err.contains("labels.csv"), "{err}");
}

#[test]
fn malformed_inputs_exit_2_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("bad.jsonl");
    fs::write(
        &traj,
        "{\"frame\":0,\"t\":0,\"q\":[1,0,0,0],\"p\":[0,0,0]}\n{\"frame\":1,\"t\":0.1,\"q\":[2,0,0,0],\"p\":[0,1,0]}\n",
    )
    .unwrap();
    let o = bin().arg("label").arg("--trajectory").arg(&traj).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl"));
}

#[test]
fn ssrl_demo_reports_and_flags_nonconvergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let small = [
        "--set",
        "ssrl.task.n=5000",
        "--set",
        "ssrl.n_test=5000",
        "--set",
        "ssrl.seeds=2",
    ];
    let o = bin()
        .arg("ssrl-demo")
        .args(small)
        .args(["--seed", "1", "--out", out])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json_line(&o)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["seed"], 1);
    let csv = fs::read_to_string(dir.path().join("ssrl_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("model,seed,bias_g,sigma_2,"));

    let stalled = bin()
        .arg("ssrl-demo")
        .args(small)
        .args([
            "--set",
            "ssrl.linear_train.lr=0.0001",
            "--set",
            "ssrl.linear_train.epochs=3",
        ])
        .output()
        .unwrap();
    assert_eq!(
        stalled.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&stalled.stderr)
    );
}
