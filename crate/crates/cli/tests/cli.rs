use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn quaysim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quaysim"))
        .args(args)
        .env_remove("QUAYSIM_SEED")
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for dir in &dirs {
        let out = quaysim(&[
            "run",
            &scenario("quickstart.json"),
            "--seed",
            "42",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        assert!(stdout(&out).contains("totals:"));
    }
    for file in ["metrics.json", "metrics.csv", "plans.csv", "pool.csv", "flow_table.csv"] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        assert!(!a.is_empty(), "{file} is empty");
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].join("metrics.json")).unwrap()).unwrap();
    assert!(report["injected"].as_u64().unwrap() > 0);
    assert_eq!(report["isolation_violations"].as_u64().unwrap(), 0);
}

#[test]
fn run_seed_changes_the_outcome() {
    let a = quaysim(&["run", &scenario("two_chains.json"), "--seed", "1"]);
    let b = quaysim(&["run", &scenario("two_chains.json"), "--seed", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(stdout(&a), stdout(&b));
}

#[test]
fn departures_flag_adds_the_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out = quaysim(&[
        "run",
        &scenario("quickstart.json"),
        "--out",
        dir.to_str().unwrap(),
        "--departures",
        "--traces",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let deps = fs::read_to_string(dir.join("departures.csv")).unwrap();
    assert!(deps.lines().count() > 1);
    assert!(deps.starts_with("packet_id,chain_id,"));
    assert!(dir.join("traces.csv").exists());
}

#[test]
fn malformed_json_exits_2_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    fs::write(&path, "{\"cluster\": {\n  \"workers\": }").unwrap();
    let out = quaysim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("broken.json:2:"), "missing position: {err}");
}

#[test]
fn invalid_spec_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("empty.json");
    let doc = serde_json::json!({
        "cluster": { "workers": [], "chains": [] },
        "traffic": {}
    });
    fs::write(&path, doc.to_string()).unwrap();
    let out = quaysim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn batch_calc_lists_every_chain() {
    let out = quaysim(&["batch-calc", &scenario("two_chains.json")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("tunnel-fwd"));
    assert!(text.contains("acl-encrypt"));
    assert!(text.contains("B_v"));
}

#[test]
fn profile_unknown_chain_exits_2() {
    let out = quaysim(&["profile", &scenario("quickstart.json"), "--chain", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope"));
}

#[test]
fn profile_emits_a_curve_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("curve.csv");
    let out = quaysim(&[
        "profile",
        &scenario("quickstart.json"),
        "--chain",
        "fwd",
        "--window-ms",
        "30",
        "--thresholds",
        "25,75",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "header plus one row per threshold: {text}");
    assert!(stdout(&out).contains("single-core max rate"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("sweep.csv");
    let out = quaysim(&[
        "sweep",
        &scenario("quickstart.json"),
        "--param",
        "flow-rate",
        "--values",
        "50,150,300",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().starts_with("flow-rate,50,"));
}
