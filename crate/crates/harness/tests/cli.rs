use std::process::Command;

fn harness() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ec2st-harness"))
}

#[test]
fn usage_error_is_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness().args(["power", "--jobs", "many", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string());
    assert!(err["message"].is_string());
}

#[test]
fn missing_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness()
        .args(["type1", "--config", "/nonexistent/experiment.toml", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn config_for_another_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "kind = \"power\"\n").unwrap();
    let out = harness()
        .args(["type1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn small_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "replications = 2\nbatch_size = 30\nmax_batches = 3\n[learner]\nhidden = [4]\n[learner.train]\nmax_epochs = 10\npatience = 5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = harness()
        .args(["power", "--seed", "3", "--jobs", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["curves.csv", "runs.jsonl", "config.json", "summary.json", "curves.svg"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    assert!(csv.starts_with("method,sample_size,rate,stderr\n"));
}
