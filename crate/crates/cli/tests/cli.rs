use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scripts.json");

fn proctor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proctor"))
        .args(args)
        .env_remove("PROCTOR_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = proctor(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated sessions, their feature tables and a tiny pair of models.
struct Workspace {
    _dir: TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["simulate", "--script", FIXTURE, "--out", s(&root.join("sessions"))]);
        ok(&["extract", "--input", s(&root.join("sessions")), "--out", s(&root.join("features"))]);
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn train(&self, kind: &str, out: &str) -> String {
        let path = |rel: &str| self.p(rel).to_str().unwrap().to_string();
        let mut args: Vec<String> = vec![
            "train".into(),
            "--kind".into(),
            kind.into(),
            "--train".into(),
            path("features/fit.csv"),
            "--validation".into(),
            path("features/holdout.csv"),
            "--out".into(),
            path(out),
            "--seed".into(),
            "3".into(),
        ];
        let extra: &[&str] = if kind == "static" {
            &["--n-trees", "20"]
        } else {
            &["--epochs", "2", "--hidden", "8", "--fc1-dim", "4"]
        };
        args.extend(extra.iter().map(|a| a.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

#[test]
fn missing_script_is_a_usage_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.json");
    let out = proctor(&["simulate", "--script", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn bad_flags_exit_with_two() {
    assert_eq!(proctor(&["train", "--kind", "forest", "--train", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(proctor(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_with_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_proctor"))
        .args(["simulate", "--script", FIXTURE, "--out", "/tmp/unused"])
        .env("PROCTOR_CONFIG", "/definitely/not/here.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.json"));
}

#[test]
fn default_benchmark_writes_ten_sessions_and_a_stable_manifest() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--out", s(&a)]);
    ok(&["simulate", "--out", s(&b)]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let sessions = manifest["sessions"].as_array().unwrap();
    assert_eq!(sessions.len(), 10);
    for entry in sessions {
        assert!(a.join(entry["path"].as_str().unwrap()).is_file());
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn extract_writes_one_row_per_frame() {
    let ws = Workspace::new();
    let text = fs::read_to_string(ws.p("features/holdout.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 29);
    assert_eq!((header[0], header[28]), ("frame_index", "label"));
    let frames = fs::read_to_string(ws.p("sessions/holdout.jsonl")).unwrap().lines().count();
    assert_eq!(lines.count(), frames);
}

#[test]
fn train_evaluate_and_stream() {
    let ws = Workspace::new();
    ws.train("static", "models/static.json");
    ws.train("temporal", "models/temporal.json");
    let first = fs::read(ws.p("models/static.json")).unwrap();
    ws.train("static", "models/static.json");
    assert_eq!(first, fs::read(ws.p("models/static.json")).unwrap());
    let first = fs::read(ws.p("models/temporal.json")).unwrap();
    ws.train("temporal", "models/temporal.json");
    assert_eq!(first, fs::read(ws.p("models/temporal.json")).unwrap());

    let pre = ws.p("models/preprocessor.json");
    let table = ok(&[
        "evaluate",
        "--static",
        s(&ws.p("models/static.json")),
        "--temporal",
        s(&ws.p("models/temporal.json")),
        "--features",
        s(&ws.p("features/holdout.csv")),
        "--preprocessor",
        s(&pre),
        "--out",
        s(&ws.p("report.json")),
    ]);
    assert!(table.contains("static_gbdt (frame)") && table.contains("temporal_lstm (sequence)"));
    assert!(table.contains("False Positives"));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.p("report.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);

    let feed = ok(&[
        "stream",
        "--session",
        s(&ws.p("sessions/holdout.jsonl")),
        "--preprocessor",
        s(&pre),
        "--static",
        s(&ws.p("models/static.json")),
        "--temporal",
        s(&ws.p("models/temporal.json")),
    ]);
    let lines: Vec<serde_json::Value> = feed.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 200);
    assert!(lines[..14].iter().all(|l| l["temporal_p"].is_null()));
    assert!(lines[14..].iter().all(|l| l["temporal_p"].is_f64()));
    assert!(lines.iter().all(|l| l["static_p"].is_f64()));
}

#[test]
fn stream_throttles_to_the_requested_rate() {
    let ws = Workspace::new();
    ws.train("static", "models/static.json");
    let start = std::time::Instant::now();
    ok(&[
        "stream",
        "--session",
        s(&ws.p("sessions/holdout.jsonl")),
        "--preprocessor",
        s(&ws.p("models/preprocessor.json")),
        "--static",
        s(&ws.p("models/static.json")),
        "--rate",
        "400",
    ]);
    // 200 frames at 400 fps: the last frame is due after ~0.5 s.
    assert!(start.elapsed().as_secs_f64() >= 0.49);
}

#[test]
fn stale_preprocessor_is_rejected() {
    let ws = Workspace::new();
    ws.train("static", "models/static.json");
    let other = ws.p("other_pre.json");
    let mut pre: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.p("models/preprocessor.json")).unwrap()).unwrap();
    pre["imputer"]["means"][0] = serde_json::json!(0.123);
    fs::write(&other, pre.to_string()).unwrap();
    let out = proctor(&[
        "evaluate",
        "--static",
        s(&ws.p("models/static.json")),
        "--features",
        s(&ws.p("features/holdout.csv")),
        "--preprocessor",
        s(&other),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
