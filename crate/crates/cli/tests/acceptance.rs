//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use nefmind::agent::{plan, run_records, AgentSession, Credentials, ExecVerdict};
use nefmind::eval::{
    read_artifact, responder_dir, run_iteration, run_protocol, similarity_f1, EchoResponder, EvalItem, LocalJudge,
    ScriptedResponder,
};
use nefmind::fixtures;
use nefmind::gateway::{hash_embedding, MockProvider};
use nefmind::mock_server::{serve, ServerFixtures, TEST_PASSWORD, TEST_USERNAME};
use nefmind::rag::{build_index, retrieve, Chunk};
use nefmind::spec::{flatten, SpecError};
use nefmind::synth::{parse_seed_response, refine, split_dataset, CallOutput, SyntheticRecord};
use nefmind::train_config::{emit_config, tuned_defaults};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn refinement_fidelity() -> Outcome {
    let parsed = parse_seed_response(fixtures::GENERATION_REPLY).map_err(|e| e.to_string())?;
    check(parsed.records.len() == 10, || format!("parsed {} records", parsed.records.len()))?;
    let spec = fixtures::nef_spec();
    let out = refine(&spec, &parsed.records);
    check(out.kept.len() == 7, || format!("kept {}", out.kept.len()))?;
    let expected: HashSet<(String, String)> =
        fixtures::seeds().into_iter().map(|s| (s.api_call, s.method)).collect();
    let kept: HashSet<(String, String)> = out.kept.iter().map(|s| (s.api_call.clone(), s.method.clone())).collect();
    check(kept == expected, || "kept records are not the seven spec endpoints".into())?;
    Ok("10 generated, 7 kept, 3 fabricated rejected".into())
}

fn numbered_records(total: usize) -> Vec<SyntheticRecord> {
    let seeds = fixtures::seeds();
    (0..total)
        .map(|i| seeds[i % seeds.len()].with_request(format!("query {i}: {}", seeds[i % seeds.len()].request)))
        .collect()
}

fn split_arithmetic() -> Outcome {
    let recs = numbered_records(765);
    let split = split_dataset(&recs, 0.7, 2024).map_err(|e| e.to_string())?;
    check(split.train.len() == 535 && split.eval.len() == 230, || {
        format!("{} / {}", split.train.len(), split.eval.len())
    })?;
    let mut all: Vec<&str> = split.train.iter().chain(&split.eval).map(|r| r.request.as_str()).collect();
    all.sort_unstable();
    all.dedup();
    check(all.len() == 765, || "train and eval do not partition the input".into())?;
    Ok("765 → 535 train / 230 eval".into())
}

fn eval_items(n: usize) -> Vec<EvalItem> {
    numbered_records(n).iter().map(EvalItem::from_record).collect()
}

fn wrong_call() -> String {
    CallOutput {
        api_call: "/api/v1/fake/endpoint".into(),
        description: "not a NEF endpoint".into(),
        method: "get".into(),
        operation: "fake".into(),
        parameters: Default::default(),
    }
    .to_canonical_json()
}

fn accuracy_arithmetic() -> Outcome {
    let items = eval_items(230);
    let mock = MockProvider::embeddings(5, 64).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (k, want) in [(226, 98.2609), (24, 10.4348), (11, 4.7826)] {
        let responder = ScriptedResponder::correct_on_first(&items, k, wrong_call());
        let art = run_iteration(&responder, &items, &LocalJudge, &mock, 1).map_err(|e| e.to_string())?;
        check((art.accuracy_0_100 - want).abs() < 1e-4, || {
            format!("{k}/230 gave {} (want {want})", art.accuracy_0_100)
        })?;
        got.push(format!("{k}→{:.4}", art.accuracy_0_100));
    }
    Ok(got.join(", "))
}

fn echo_ceiling() -> Outcome {
    let items = eval_items(230);
    let mock = MockProvider::embeddings(5, 256).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let echo = EchoResponder::new(&items);
    let summary = run_protocol(&echo, &items, &LocalJudge, &mock, 25, dir.path()).map_err(|e| e.to_string())?;
    check(summary.iterations == 25, || format!("{} iterations", summary.iterations))?;
    check(summary.accuracy.max == 100.0 && summary.accuracy.min == 100.0, || {
        format!("accuracy {:?}", summary.accuracy)
    })?;
    let rdir = responder_dir(dir.path(), "echo");
    for i in 1..=25 {
        let art = read_artifact(&rdir.join(format!("eval-iter-{i:03}.json"))).map_err(|e| e.to_string())?;
        check(art.accuracy_0_100 == 100.0 && art.mean_similarity == 1.0, || {
            format!("iteration {i}: {} / {}", art.accuracy_0_100, art.mean_similarity)
        })?;
    }
    Ok("25 iterations, accuracy 100, similarity 1.0 each".into())
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn brute_f1(cand: &[String], refs: &[String], seed: u64, dim: usize) -> (f64, f64, f64) {
    let mut p = 0.0;
    for c in cand {
        let mut best = f64::NEG_INFINITY;
        for r in refs {
            best = best.max(brute_cosine(&hash_embedding(seed, dim, c), &hash_embedding(seed, dim, r)));
        }
        p += best;
    }
    p /= cand.len() as f64;
    let mut r = 0.0;
    for x in refs {
        let mut best = f64::NEG_INFINITY;
        for c in cand {
            best = best.max(brute_cosine(&hash_embedding(seed, dim, c), &hash_embedding(seed, dim, x)));
        }
        r += best;
    }
    r /= refs.len() as f64;
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn similarity_oracle() -> Outcome {
    const TOL: f64 = 1e-9;
    // values frozen from a separate Python implementation
    let golden: Value = serde_json::from_str(include_str!("../../core/tests/golden/bertscore_oracle.json"))
        .map_err(|e| e.to_string())?;
    let seed = golden["seed"].as_u64().unwrap_or_default();
    let dim = golden["dim"].as_u64().unwrap_or_default() as usize;
    let mock = MockProvider::embeddings(seed, dim).map_err(|e| e.to_string())?;
    let strings = |v: &Value| -> Vec<String> {
        v.as_array()
            .map(|a| a.iter().filter_map(|t| t.as_str().map(String::from)).collect())
            .unwrap_or_default()
    };
    let cases = golden["cases"].as_array().cloned().unwrap_or_default();
    check(cases.len() == 100, || format!("{} frozen cases", cases.len()))?;
    let mut worst: f64 = 0.0;
    for (i, case) in cases.iter().enumerate() {
        let s = similarity_f1(&strings(&case["candidate"]), &strings(&case["reference"]), &mock)
            .map_err(|e| e.to_string())?;
        for (got, key) in [(s.p, "p"), (s.r, "r"), (s.f1, "f1")] {
            let d = (got - case[key].as_f64().unwrap_or(f64::NAN)).abs();
            check(d <= TOL, || format!("frozen case {i} {key} differs by {d}"))?;
            worst = worst.max(d);
        }
    }

    // and 100 fresh random pairs against the in-test brute force
    let vocab: Vec<String> = (0..40).map(|i| format!("tok{i}")).chain(["/", "{", "}", ":"].map(String::from)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mock = MockProvider::embeddings(17, 32).map_err(|e| e.to_string())?;
    for i in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let n = rng.gen_range(1..=8);
            (0..n).map(|_| vocab.choose(rng).cloned().unwrap_or_default()).collect()
        };
        let (c, r) = (draw(&mut rng), draw(&mut rng));
        let s = similarity_f1(&c, &r, &mock).map_err(|e| e.to_string())?;
        let (bp, br, bf) = brute_f1(&c, &r, 17, 32);
        for (got, want, key) in [(s.p, bp, "p"), (s.r, br, "r"), (s.f1, bf, "f1")] {
            let d = (got - want).abs();
            check(d <= TOL, || format!("random pair {i} {key} differs by {d}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("200 pairs, max deviation {worst:.1e}"))
}

fn retrieval_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let (seed, dim) = (3, 16);
    let mock = MockProvider::embeddings(seed, dim).map_err(|e| e.to_string())?;
    let mut ties = 0;
    for trial in 0..50 {
        let n = rng.gen_range(1..=20);
        let mut texts: Vec<String> = Vec::new();
        for _ in 0..n {
            // repeat an earlier text now and then to force exact ties
            if !texts.is_empty() && rng.gen_bool(0.2) {
                let t = texts.choose(&mut rng).cloned().unwrap_or_default();
                texts.push(t);
            } else {
                let len = rng.gen_range(1..=4);
                texts.push((0..len).map(|_| words.choose(&mut rng).cloned().unwrap_or_default()).collect::<Vec<_>>().join(" "));
            }
        }
        let chunks: Vec<Chunk> = texts
            .iter()
            .enumerate()
            .map(|(index, t)| Chunk {
                text: t.clone(),
                source_offset: 0,
                index,
            })
            .collect();
        let index = build_index(&chunks, &mock).map_err(|e| e.to_string())?;
        let query = (0..rng.gen_range(1..=4)).map(|_| words.choose(&mut rng).cloned().unwrap_or_default()).collect::<Vec<_>>().join(" ");
        let k = rng.gen_range(1..=n + 2);
        let got: Vec<usize> = retrieve(&index, &query, k, &mock)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|(c, _)| c.index)
            .collect();

        let qv = hash_embedding(seed, dim, &query);
        let mut scored: Vec<(f64, usize)> =
            texts.iter().enumerate().map(|(i, t)| (brute_cosine(&qv, &hash_embedding(seed, dim, t)), i)).collect();
        // score descending, then lower chunk index first
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        ties += scored.windows(2).filter(|w| w[0].0 == w[1].0).count();
        let want: Vec<usize> = scored.iter().take(k).map(|(_, i)| *i).collect();
        check(got == want, || format!("index {trial}: got {got:?}, want {want:?}"))?;
    }
    Ok(format!("50 indexes match, {ties} tied neighbours exercised"))
}

fn flattening() -> Outcome {
    fn refs(v: &Value) -> usize {
        match v {
            Value::Object(m) => m.iter().map(|(k, v)| usize::from(k == "$ref") + refs(v)).sum(),
            Value::Array(a) => a.iter().map(refs).sum(),
            _ => 0,
        }
    }
    let spec = flatten(&fixtures::nef_document(), fixtures::resolver).map_err(|e| e.to_string())?;
    check(refs(spec.document()) == 0, || format!("{} residual refs", refs(spec.document())))?;
    let again = flatten(&spec.to_document("flat.json"), |_: &str| None).map_err(|e| e.to_string())?;
    check(again.document() == spec.document(), || "second flatten changed the document".into())?;
    match flatten(&fixtures::cycle_document(), fixtures::resolver) {
        Err(SpecError::ReferenceCycle { cycle }) => Ok(format!("0 residual refs, idempotent, cycle {}", cycle.join(" → "))),
        other => Err(format!("cyclic fixture gave {other:?}")),
    }
}

fn agent_end_to_end() -> Outcome {
    let spec = fixtures::nef_spec();
    let server = serve(spec.clone(), "127.0.0.1:0", ServerFixtures::standard(&spec)).map_err(|e| e.to_string())?;
    let creds = Credentials::new(TEST_USERNAME, TEST_PASSWORD);
    let seeds = fixtures::seeds();

    // the subscriptions chain on its own session: login, then the listing
    let subs = seeds
        .iter()
        .find(|s| s.api_call.ends_with("{scsAsId}/subscriptions") && s.method == "get")
        .ok_or("no subscriptions seed")?;
    let p = plan(subs, &spec, &creds).map_err(|e| e.to_string())?;
    let mut fresh = AgentSession::new(server.base_url(), Duration::from_secs(10)).map_err(|e| e.to_string())?;
    let r = fresh.execute(&p).map_err(|e| e.to_string())?;
    let chain: Vec<String> = r
        .steps
        .iter()
        .map(|s| format!("{} {} {}", s.method, s.path, s.status_code.unwrap_or(0)))
        .collect();
    check(
        r.verdict == ExecVerdict::Success
            && chain
                == [
                    "post /api/v1/login/access-token 200",
                    "get /api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions 200",
                ],
        || format!("chain {chain:?}"),
    )?;

    let mut session = AgentSession::new(server.base_url(), Duration::from_secs(10)).map_err(|e| e.to_string())?;
    let run = run_records(&seeds, &spec, &creds, &mut session).map_err(|e| e.to_string())?;
    check(run.succeeded == 7, || {
        let failed: Vec<String> = run
            .outcomes
            .iter()
            .filter(|o| !o.succeeded())
            .map(|o| format!("{}: {:?}", o.request, o.plan_error.clone().or(o.report.as_ref().and_then(|r| r.failure_reason.clone()))))
            .collect();
        format!("{} of 7 succeeded: {failed:?}", run.succeeded)
    })?;
    Ok("7/7 seeds succeed; login → subscriptions chain returns 200, 200".into())
}

fn config_golden() -> Outcome {
    let (q, t) = tuned_defaults();
    let mut buf = Vec::new();
    emit_config(&q, &t, &mut buf).map_err(|e| e.to_string())?;
    let golden = include_str!("../../core/tests/golden/tuning-config.json");
    check(buf == golden.as_bytes(), || "emitted config differs from golden".into())?;
    Ok("byte-identical to golden".into())
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace_root().join("fixtures/pipeline/fixtures.yaml");
    let run = |name: &str| -> Result<PathBuf, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_nefmind"))
            .arg("pipeline")
            .arg("--config")
            .arg(&config)
            .args(["--provider", "mock", "--provider-seed", "7", "--out-dir"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || {
            format!("pipeline exited {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
        })?;
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    for f in ["train.csv", "eval.csv", "tuning-config.json"] {
        let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
        let (x, y) = (x.map_err(|e| format!("{f}: {e}"))?, y.map_err(|e| format!("{f}: {e}"))?);
        check(!x.is_empty() && x == y, || format!("{f} differs between runs"))?;
    }
    Ok("train.csv, eval.csv, tuning-config.json byte-identical".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("refinement fidelity", refinement_fidelity, Duration::from_secs(1)),
        ("split arithmetic", split_arithmetic, Duration::from_secs(1)),
        ("accuracy arithmetic", accuracy_arithmetic, Duration::from_secs(10)),
        ("echo-responder ceiling", echo_ceiling, Duration::from_secs(60)),
        ("similarity oracle equivalence", similarity_oracle, Duration::from_secs(30)),
        ("retrieval exactness", retrieval_exactness, Duration::from_secs(30)),
        ("flattening", flattening, Duration::from_secs(1)),
        ("end-to-end agent validation", agent_end_to_end, Duration::from_secs(10)),
        ("config golden", config_golden, Duration::from_secs(1)),
        ("mock pipeline determinism", pipeline_determinism, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({took:.2?})");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
