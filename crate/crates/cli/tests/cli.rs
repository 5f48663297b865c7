use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nefmind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nefmind"))
        .args(args)
        .env_remove("NEFMIND_MISSING_KEY")
        .output()
        .unwrap()
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture_config() -> String {
    root().join("fixtures/pipeline/fixtures.yaml").display().to_string()
}

fn nef_spec() -> String {
    root().join("crates/core/fixtures/nef_api.yaml").display().to_string()
}

fn run_fixture_pipeline(out: &Path) {
    let o = nefmind(&["pipeline", "--config", &fixture_config(), "--provider", "mock", "--out-dir", &out.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_writes_corpus_and_config() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(dir.path());
    for f in ["train.csv", "eval.csv", "tuning-config.json", "manifest.json", "refined.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["refined"], 7);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let refined = std::fs::read_to_string(dir.path().join("refined.jsonl")).unwrap();
    assert_eq!(refined.lines().count(), 7);
}

#[test]
fn evaluate_echo_two_iterations() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(&dir.path().join("corpus"));
    let eval_set = dir.path().join("corpus/eval.csv").display().to_string();
    let out = dir.path().join("eval");
    let o = nefmind(&[
        "evaluate", "--responder", "echo", "--iterations", "2", "--eval-set", &eval_set, "--out-dir",
        &out.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("echo/eval-iter-001.json").is_file());
    assert!(out.join("echo/eval-iter-002.json").is_file());
    assert!(!out.join("echo/eval-iter-003.json").exists());
    let table: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval-summary.json")).unwrap()).unwrap();
    assert_eq!(table["echo"]["accuracy"]["min"], 100.0);
    assert_eq!(table["echo"]["iterations"], 2);
}

#[test]
fn missing_key_exits_two_and_names_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("live.yaml");
    std::fs::write(
        &cfg,
        format!(
            "spec_paths: [{}]\nproviders:\n  generation:\n    kind: openai\n    base_url: http://127.0.0.1:9/v1\n    \
             api_key_env_name: NEFMIND_MISSING_KEY\n    model_name: gpt-4\n    request_timeout_secs: 5\n    \
             max_retries: 0\n    retry_backoff_base_secs: 0\n",
            nef_spec()
        ),
    )
    .unwrap();
    let o = nefmind(&["pipeline", "--config", &cfg.display().to_string(), "--out-dir", &dir.path().join("o").display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("NEFMIND_MISSING_KEY"), "{err}");
    assert!(err.contains("generate") || err.contains("providers.generation"), "{err}");
}

#[test]
fn bad_records_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let recs = dir.path().join("bad.jsonl");
    std::fs::write(&recs, "{\"request\": \"x\"}\n").unwrap();
    let o = nefmind(&["export", "--records", &recs.display().to_string(), "--out", &dir.path().join("o.csv").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl"));
}

#[test]
fn agent_run_against_spawned_mock() {
    let dir = tempfile::tempdir().unwrap();
    run_fixture_pipeline(&dir.path().join("corpus"));
    let report = dir.path().join("agent.json");
    let o = nefmind(&[
        "agent-run", "--spec", &nef_spec(), "--records",
        &dir.path().join("corpus/refined.jsonl").display().to_string(), "--out", &report.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["succeeded"], 7);
    assert_eq!(v["server_log"].as_array().unwrap().len(), 8);
}

#[test]
fn stage_by_stage_matches_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f).display().to_string();
    run_fixture_pipeline(&dir.path().join("p"));
    let cfg = fixture_config();
    let steps: [&[&str]; 5] = [
        &["generate", "--out", &d("gen.jsonl")],
        &["refine", "--records", &d("gen.jsonl"), "--out", &d("ref.jsonl")],
        &["scale", "--seeds", &d("ref.jsonl"), "--out", &d("scaled.jsonl")],
        &["split", "--records", &d("scaled.jsonl"), "--train-out", &d("train.jsonl"), "--eval-out", &d("eval.jsonl")],
        &["export", "--records", &d("train.jsonl"), "--out", &d("train.csv")],
    ];
    for args in steps {
        let mut full = vec!["--config", cfg.as_str(), "--provider", "mock"];
        full.extend_from_slice(args);
        let o = nefmind(&full);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(d("train.csv")).unwrap(), std::fs::read(d("p/train.csv")).unwrap());
    assert!(dir.path().join("train.csv.manifest.json").is_file());
}
