use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/sample_corpus.txt")
}

fn corpusforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corpusforge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CORPUSFORGE_DATA_DIR")
        .env_remove("CORPUSFORGE_TOKEN")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn run_on_sample_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample();
    let out = corpusforge(
        &["run", "--input", input.to_str().unwrap(), "--out", "data.jsonl"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["stage_counts"]["ingested"], 100);
    assert_eq!(report["stage_counts"]["scored"], 89);
    let data = std::fs::read_to_string(dir.path().join("data.jsonl")).unwrap();
    // Only auto-accepted pairs are exported before any review.
    assert_eq!(
        data.lines().count() as u64,
        report["level_histogram"]["high"].as_u64().unwrap()
    );
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = corpusforge(&["run", "--out", "data.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--input") && err.contains("Usage"), "{err}");
}

#[test]
fn unknown_subcommand_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(corpusforge(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(corpusforge(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn stage_failure_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("offline.json"),
        r#"{"adapters":{"ape":{"stage":"ape","kind":"remote","endpoint":"http://127.0.0.1:1/","adapter_id":"offline"}}}"#,
    )
    .unwrap();
    let input = sample();
    let out = corpusforge(
        &[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--config",
            "offline.json",
            "--out",
            "data.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage_failure"));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec!["offline.json"]);
}

#[test]
fn bad_config_and_bad_corpus_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"quantizer":{"high_fraction":0.9,"low_fraction":0.9}}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"text\":\"fine\"}\nnot json\n").unwrap();
    let input = sample();
    let out = corpusforge(
        &[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--config",
            "bad.json",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = corpusforge(&["run", "--input", "bad.jsonl", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[format]"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn persistent_workflow_through_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample();
    let input = input.to_str().unwrap();
    let out = corpusforge(
        &["ingest", "--data-dir", "db", "--project", "p1", "--input", input],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["ingested"], 100);

    let out = corpusforge(
        &[
            "preview",
            "--data-dir",
            "db",
            "--project",
            "p1",
            "--stage",
            "filter",
            "-n",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(stdout_json(&out).as_array().unwrap().len(), 3);
    let out = corpusforge(
        &["preview", "--data-dir", "db", "--project", "p1", "--stage", "qe"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let out = corpusforge(&["report", "--data-dir", "db", "--project", "p1"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = corpusforge(
        &[
            "run",
            "--data-dir",
            "db",
            "--project",
            "p1",
            "--input",
            input,
            "--out",
            "a.tsv",
            "--format",
            "tsv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);

    let out = Command::new(env!("CARGO_BIN_EXE_corpusforge"))
        .args(["report", "--project", "p1"])
        .env("CORPUSFORGE_DATA_DIR", dir.path().join("db"))
        .output()
        .unwrap();
    assert_eq!(stdout_json(&out), report);

    let out = corpusforge(
        &["export", "--data-dir", "db", "--project", "p1", "--format", "tsv"],
        dir.path(),
    );
    assert_eq!(out.stdout, std::fs::read(dir.path().join("a.tsv")).unwrap());
    let out = corpusforge(
        &[
            "export",
            "--data-dir",
            "db",
            "--project",
            "p1",
            "--include",
            "pending_review,auto_accepted",
            "--out",
            "all.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let all = std::fs::read_to_string(dir.path().join("all.jsonl")).unwrap();
    assert_eq!(all.lines().count(), 89);

    let out = corpusforge(
        &[
            "run",
            "--data-dir",
            "db",
            "--project",
            "p1",
            "--input",
            input,
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflict"));
}

#[test]
fn serve_fails_on_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let out = corpusforge(&["serve", "--data-dir", "db", "--bind", &addr], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
