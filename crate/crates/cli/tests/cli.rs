use std::path::Path;
use std::process::{Command, Output};

fn kimura(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kimura"))
        .args(args)
        .env_remove("KIMURA_THREADS")
        .output()
        .expect("spawn kimura")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const BASE: &str = r#"
schema_version = 1
name = "small"
seed = 5

[operator]
family = "model"
n = 1
n0 = 1

[grid]
cells = 32
refinements = [32, 64]

[scheme]
dt = 0.005
t_end = 0.5
"#;

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, format!("{BASE}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn bundle(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn missing_report_exits_one() {
    let o = kimura(&["report", "definitely-missing.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&kimura(&["frobnicate"])), 2);
    assert_eq!(code(&kimura(&["solve"])), 2);
    assert_eq!(code(&kimura(&["solve", "--config", "nope.toml"])), 2);
}

#[test]
fn schema_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "\n[[experiments]]\nkind = \"boundary-harnack\"\nr = -0.2\n",
    );
    let o = kimura(&[
        "harnack",
        "--config",
        &cfg,
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiments[0].r"));
}

#[test]
fn empty_experiment_list_gives_validation_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = kimura(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b = bundle(&out.join("validate"));
    assert_eq!(b["status"], "pass");
    assert!(b["reports"].as_array().unwrap().is_empty());
    assert!(b["validation"]["checks"].is_array());
}

#[test]
fn eigen_benchmark_config_passes_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/benchmark-eigen.toml"
    );
    let out = dir.path().join("out");
    let o = kimura(&["run", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let b = bundle(&out.join("run"));
    let err = b["reports"][0]["constants"]["sup_error"].as_f64().unwrap();
    assert!(err <= 1e-3);
    assert!(out.join("run/series/00-eigen-benchmark.csv").exists());
    let r = kimura(&["report", out.join("run").to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("eigen-benchmark  PASS"));
}

#[test]
fn failing_experiment_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[[experiments]]\nkind = \"singular-measure\"\nvalue_tolerance = 0.0\nslope_tolerance = 0.0\n");
    let out = dir.path().join("out");
    let o = kimura(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(bundle(&out.join("run"))["status"], "fail");
}

#[test]
fn mid_run_failure_leaves_partial_bundle_with_marker() {
    let dir = tempfile::tempdir().unwrap();
    // t <= 4 r^2: the cylinder does not fit in the time window
    let cfg = write_config(
        dir.path(),
        "\n[[experiments]]\nkind = \"conjugation\"\n\n[[experiments]]\nkind = \"boundary-harnack\"\nt = 0.1\nr = 0.2\n",
    );
    let out = dir.path().join("out");
    let o = kimura(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let run = out.join("run");
    assert!(run.join("FAILED").exists());
    let b = bundle(&run);
    assert_eq!(b["status"], "error");
    assert_eq!(b["reports"][0]["tag"], "conjugation");
    assert_eq!(b["errors"][0]["experiment"], "boundary-harnack");
}

#[test]
fn identical_runs_give_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "\n[[experiments]]\nkind = \"boundary-harnack\"\n\n[[experiments]]\nkind = \"holder\"\n",
    );
    let mut reports = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = kimura(&[
            "harnack",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
            "--seed",
            "9",
        ]);
        assert!(code(&o) <= 1);
        reports.push(std::fs::read(out.join("harnack/report.json")).unwrap());
        assert!(out.join("harnack/timing.json").exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn grid_override_and_snapshot_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "\n[[experiments]]\nkind = \"elliptic-harnack\"\n",
    );
    let out = dir.path().join("out");
    let o = kimura(&[
        "solve",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--grid-override",
        "16",
    ]);
    assert_eq!(code(&o), 0);
    assert!(out.join("solve/snapshots/traj-0-16.bin").exists());
    assert!(out.join("solve/snapshots/traj-1-32.json").exists());
    let o = kimura(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--grid-override",
        "16",
    ]);
    assert!(code(&o) <= 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        bundle(&out.join("verify"))["reports"][0]["tag"],
        "elliptic-harnack"
    );
}
