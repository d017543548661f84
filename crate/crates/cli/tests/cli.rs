use std::path::Path;
use std::process::{Command, Output};

fn tiretwin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiretwin"))
        .args(args)
        .current_dir(dir)
        .env_remove("TIRETWIN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "[[synth.fleets]]\nfleet_id = \"a\"\nn_tires = 2\nmax_mileage = 20000.0\n\n\
         [[synth.fleets]]\nfleet_id = \"b\"\nn_tires = 1\nmax_mileage = 20000.0\npressure_offset = -150.0\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let last = text.lines().last().expect("an error line");
    serde_json::from_str(last).expect("machine-readable error")
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for name in ["a.jsonl", "b.jsonl"] {
        let out = tiretwin(&["generate", "--config", &cfg, "--seed", "42", "--out", name], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let out = tiretwin(&["generate", "--config", &cfg, "--seed", "43", "--out", "c.jsonl"], dir.path());
    assert!(out.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn generate_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiretwin(&["generate", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["kind"], "config");
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn train_on_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = tiretwin(&["train", "--data", "empty.jsonl", "--out", "m.json", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["code"], 3);
    assert!(e["message"].as_str().unwrap().contains("EmptyDataset"));
}

#[test]
fn unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\n[tft]\nhiden_size = 8\n").unwrap();
    let out = tiretwin(&["generate", "--config", "bad.toml", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("hiden_size"));
}

#[test]
fn bad_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiretwin(&["decide", "--model", "m.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["code"], 2);
}

#[test]
fn missing_checkpoint_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.jsonl"), "").unwrap();
    let out = tiretwin(
        &["decide", "--model", "nope.json", "--series", "d.jsonl", "--at-mileage", "1000", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    std::fs::create_dir(dir.path().join("out")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tiretwin"))
        .args(["generate", "--config", &cfg, "--seed", "7", "--out", "f.jsonl"])
        .current_dir(dir.path())
        .env("TIRETWIN_OUT_DIR", dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("out/f.jsonl").exists());
}

#[test]
fn reduce_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(tiretwin(&["generate", "--config", &cfg, "--seed", "3", "--out", "f.jsonl"], dir.path()).status.success());
    let out = tiretwin(
        &["reduce", "--input", "f.jsonl", "--out", "r.jsonl", "--target-count", "50", "--report", "r.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(report.starts_with("tire_id,original_count,kept_count,theta"));
}

#[test]
fn plot_rejects_wrong_schema() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.json"), "{\"thresholds\": [0.1]}").unwrap();
    let out = tiretwin(&["plot", "--kind", "threshold-curve", "--data", "x.json", "--out", "fig"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("SchemaMismatch"));
}
