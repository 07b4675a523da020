use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn xalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xalign"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = xalign(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("structured error");
    serde_json::from_str(line).unwrap()
}

/// Small synthetic corpus with imported masks.
fn corpus(dir: &Path) -> PathBuf {
    ok(dir, &["synth", "syn", "--images", "6", "--participants", "3", "--size", "32"]);
    ok(dir, &["ingest", "syn/manifest.json", "--out", "c"]);
    ok(dir, &["import-masks", "syn/external_masks", "--corpus", "c"]);
    dir.join("c")
}

#[test]
fn analyze_before_humanmask_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = xalign(dir.path(), &["analyze", "c"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "missing_artifact");
    assert!(err["error"]["hint"].as_str().unwrap().contains("xalign humanmask"));
    assert!(err["error"]["artifact"].as_str().unwrap().contains("human"));

    let out = xalign(dir.path(), &["report", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["hint"].as_str().unwrap().contains("xalign analyze"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let c = c.to_str().unwrap();
    for args in [
        vec!["sweep", c, "--R-grid", "0.2:0.1:0.05", "--alpha-grid", "3"],
        vec!["sweep", c, "--R-grid", "0.1"],
        vec!["explain", c, "--method", "gradcam"],
        vec!["explain", c, "--method", "os", "--classifier", "resnet"],
        vec!["humanmask", c, "--R", "-1"],
        vec!["analyze", c, "--tau", "1.5"],
        vec!["frobnicate"],
        vec!["analyze"],
    ] {
        let out = xalign(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"version\": 1,\n\"images\": [\n}").unwrap();
    let out = xalign(dir.path(), &["ingest", "bad.json", "--out", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "data");
    let out = xalign(dir.path(), &["analyze", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    std::fs::write(dir.path().join("x.toml"), "tau = 0.5\nalpha = 2.0\n").unwrap();
    ok(dir.path(), &["--config", "x.toml", "humanmask", "c"]);
    ok(dir.path(), &["--config", "x.toml", "analyze", "c"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("analysis/report.json")).unwrap()).unwrap();
    assert_eq!(report["tau"], 0.5);
    assert_eq!(report["human_params"]["alpha"], 2.0);

    ok(dir.path(), &["--config", "x.toml", "analyze", "c", "--tau", "0.9"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("analysis/report.json")).unwrap()).unwrap();
    assert_eq!(report["tau"], 0.9);

    std::fs::write(dir.path().join("bad.toml"), "tua = 0.5\n").unwrap();
    assert_eq!(xalign(dir.path(), &["--config", "bad.toml", "analyze", "c"]).status.code(), Some(2));
}

#[test]
fn every_command_leaves_a_run_record() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    ok(dir.path(), &["--jobs", "2", "explain", "c", "--method", "os", "--seed", "5"]);
    ok(dir.path(), &["humanmask", "c"]);
    ok(dir.path(), &["analyze", "c"]);
    ok(dir.path(), &["sweep", "c", "--R-grid", "0.05,0.1", "--alpha-grid", "3"]);
    ok(dir.path(), &["report", "c", "--out", "rep"]);
    let records = [
        dir.path().join("syn/run.json"),
        c.join("runs/ingest/run.json"),
        c.join("runs/import-masks/run.json"),
        c.join("runs/explain/toy/occlusion/run.json"),
        c.join("runs/humanmask/run.json"),
        c.join("runs/analyze/run.json"),
        c.join("runs/sweep/run.json"),
        dir.path().join("rep/run.json"),
    ];
    for path in &records {
        let rec: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        for key in ["command", "argv", "version", "core_version", "started_at", "config", "inputs", "outputs"] {
            assert!(rec.get(key).is_some(), "{} lacks {key}", path.display());
        }
    }
    let explain: Value =
        serde_json::from_str(&std::fs::read_to_string(&records[3]).unwrap()).unwrap();
    assert_eq!(explain["seed"], 5);
    assert_eq!(explain["jobs"], 2);
    assert_eq!(explain["config"]["explainer"]["seed"], 5);
}

#[test]
fn report_picks_up_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    ok(dir.path(), &["humanmask", "c"]);
    ok(dir.path(), &["analyze", "c"]);
    ok(dir.path(), &["report", "c", "--out", "before"]);
    ok(dir.path(), &["sweep", "c", "--R-grid", "0.05:0.1:0.05", "--alpha-grid", "1,3"]);
    ok(dir.path(), &["report", "c", "--out", "after", "--plot-data"]);
    let rows = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap().lines().count();
    // One detector: header plus one row per grid point.
    assert_eq!(rows("before/sweep_grid.csv"), 2);
    assert_eq!(rows("after/sweep_grid.csv"), 5);
    assert!(dir.path().join("after/plot_sweep_long.csv").is_file());
    assert!(!dir.path().join("before/plot_sweep_long.csv").exists());
}

#[test]
fn import_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let ext = dir.path().join("ext/det/gradcam");
    std::fs::create_dir_all(&ext).unwrap();
    let id = std::fs::read_dir(dir.path().join("c/images"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
        .file_stem()
        .unwrap()
        .to_string_lossy()
        .into_owned();
    std::fs::write(ext.join(format!("{id}.csv")), "0,1\n1,0\n").unwrap();
    let out = xalign(dir.path(), &["import-masks", "ext", "--corpus", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("expected 32x32"));
}
