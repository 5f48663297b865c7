//! The files and HTTP protocol shared with the Python trainer.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::{routing::post, Json, Router};
use nefmind::eval::{read_artifact, run_protocol, EvalItem, HttpResponder, LocalJudge, Responder};
use nefmind::fixtures;
use nefmind::gateway::MockProvider;
use nefmind::synth::{export_instruct_csv, import_instruct_csv, CallOutput};
use nefmind::train_config::{load_config, load_stats, ConfigError, TuningConfig};
use serde_json::{json, Value};

#[test]
fn csv_contract() {
    let seeds = fixtures::seeds();
    let mut buf = Vec::new();
    assert_eq!(export_instruct_csv(&seeds, &mut buf).unwrap(), 7);
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("instruct,output\r\n"));
    let pairs = import_instruct_csv(buf.as_slice()).unwrap();
    for (pair, rec) in pairs.iter().zip(&seeds) {
        assert_eq!(pair.instruct, rec.request);
        let out: CallOutput = serde_json::from_str(&pair.output).unwrap();
        assert_eq!(out, rec.output());
    }
}

#[test]
fn tuning_config_contract() {
    let cfg = load_config(include_str!("golden/tuning-config.json").as_bytes()).unwrap();
    assert_eq!(cfg, TuningConfig::tuned_defaults());
    let mut doc: Value = serde_json::from_str(include_str!("golden/tuning-config.json")).unwrap();
    doc["schema_version"] = json!(2);
    assert!(load_config(doc.to_string().as_bytes()).is_err());
}

#[test]
fn training_stats_contract() {
    // what the trainer writes, including its own metadata
    let written = r#"{
        "runtime_seconds": 595.0, "samples_per_second": 4.495, "steps_per_second": 1.504,
        "total_flo": 6.08e15, "final_loss": 0.1921,
        "metadata": {"base_model": "tiny", "max_seq_length": 512}
    }"#;
    let s = load_stats(written.as_bytes()).unwrap();
    assert_eq!(s.runtime_seconds, 595.0);
    assert_eq!(s.total_flo, 6.08e15);
    assert_eq!(s.final_loss, 0.1921);
    let nan = written.replace("0.1921", "NaN");
    assert!(matches!(load_stats(nan.as_bytes()), Err(ConfigError::NonFinite { field: "final_loss" })));
}

/// A stand-in for the trainer's responder: answers each query from a fixed table.
fn answer_server(answers: HashMap<String, String>) -> SocketAddr {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    let answers = Arc::new(answers);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new().route(
                "/answer",
                post(move |Json(body): Json<Value>| {
                    let answers = answers.clone();
                    async move {
                        let q = body["query"].as_str().unwrap_or_default();
                        Json(json!({ "text": answers.get(q).cloned().unwrap_or_default() }))
                    }
                }),
            );
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    addr
}

#[test]
fn answer_endpoint_loop() {
    let seeds = fixtures::seeds();
    let items: Vec<EvalItem> = seeds
        .iter()
        .chain(&seeds[..3])
        .map(EvalItem::from_record)
        .collect();
    assert_eq!(items.len(), 10);
    let answers = items[..5].iter().map(|i| (i.query.clone(), i.reference.clone())).collect();
    let addr = answer_server(answers);
    let responder = HttpResponder::new("bridge", format!("http://{addr}/answer"), Duration::from_secs(10)).unwrap();
    assert_eq!(responder.answer(&items[0].query).unwrap(), items[0].reference);

    let dir = tempfile::tempdir().unwrap();
    let mock = MockProvider::embeddings(3, 128).unwrap();
    let summary = run_protocol(&responder, &items, &LocalJudge, &mock, 2, dir.path()).unwrap();
    assert_eq!(summary.iterations, 2);
    // the first five items include three repeated queries answered from the table
    let art = read_artifact(&dir.path().join("bridge/eval-iter-001.json")).unwrap();
    assert_eq!(art.entries.len(), 10);
    assert_eq!(art.entries.iter().filter(|e| e.judge_score == 1).count(), 8);
    assert_eq!(summary.accuracy.max, 80.0);
}
