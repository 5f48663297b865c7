//! Evaluation protocol: responders answer eval queries, a judge scores each
//! prediction 0/1, and a BERTScore-style token similarity is computed; runs
//! repeat for a number of iterations and are summarized by max/min.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fsutil::write_json_atomic;
use crate::gateway::{ChatRequest, GatewayError, Provider};
use crate::rag::{answer_query, VectorIndex};
use crate::synth::{CallOutput, InstructOutputPair, SyntheticRecord};

pub const TOKENIZER_ID: &str = "ascii-punct-detach+whitespace/v1";
pub const JUDGE_PROMPT_VERSION: &str = "judge-prompt/v1";
pub const DEFAULT_ITERATIONS: usize = 25;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("responder `{id}` failed: {message}")]
    Responder { id: String, message: String },
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("token list is empty")]
    EmptyTokens,
    #[error("iteration {iteration} failed after {} entries: {source}", .partial.len())]
    Iteration {
        iteration: usize,
        partial: Vec<EvalEntry>,
        #[source]
        source: Box<EvalError>,
    },
    #[error("malformed eval file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase-free tokenizer: ASCII punctuation other than `_` becomes its own
/// token, then the text is split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c.is_ascii_punctuation() && c != '_' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Similarity {
    pub const ZERO: Similarity = Similarity { p: 0.0, r: 0.0, f1: 0.0 };
}

/// Greedy max-cosine matching over token embeddings.
///
/// Precision is the mean, over candidate tokens, of the best cosine against
/// any reference token; recall is the same with the roles swapped. No
/// baseline rescaling and no idf weighting.
pub fn similarity_f1<P: Provider + ?Sized>(
    candidate: &[String],
    reference: &[String],
    provider: &P,
) -> Result<Similarity, EvalError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyTokens);
    }
    let mut unique: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for t in candidate.iter().chain(reference) {
        if !slot.contains_key(t.as_str()) {
            slot.insert(t, unique.len());
            unique.push(t.clone());
        }
    }
    let vectors = provider.embed(&unique)?;
    if vectors.len() != unique.len() {
        return Err(GatewayError::MalformedPayload("embedding count mismatch".into()).into());
    }
    let vec_of = |t: &String| vectors[slot[t.as_str()]].values();
    let cand: Vec<&[f64]> = candidate.iter().map(vec_of).collect();
    let refs: Vec<&[f64]> = reference.iter().map(vec_of).collect();
    Ok(greedy_match(&cand, &refs))
}

/// Precision/recall/F1 from pairwise cosines of already-embedded tokens.
///
/// Scores equal [`crate::gateway::cosine`] pair by pair; norms are computed once per vector.
pub fn greedy_match(cand: &[&[f64]], refs: &[&[f64]]) -> Similarity {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cn: Vec<f64> = cand.iter().map(|v| norm(v)).collect();
    let rn: Vec<f64> = refs.iter().map(|v| norm(v)).collect();
    let sims: Vec<Vec<f64>> = cand
        .iter()
        .zip(&cn)
        .map(|(c, &nc)| {
            refs.iter()
                .zip(&rn)
                .map(|(r, &nr)| {
                    if nc == 0.0 || nr == 0.0 {
                        0.0
                    } else if std::ptr::eq(*c, *r) {
                        1.0
                    } else {
                        let dot: f64 = c.iter().zip(r.iter()).map(|(x, y)| x * y).sum();
                        let s = (dot / (nc * nr)).clamp(-1.0, 1.0);
                        if s > 1.0 - 1e-9 && c == r {
                            1.0
                        } else {
                            s
                        }
                    }
                })
                .collect()
        })
        .collect();
    let best_per_row = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let p = best_per_row.sum::<f64>() / cand.len() as f64;
    let r = (0..refs.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / refs.len() as f64;
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Similarity { p, r, f1 }
}

/// Something that answers a query with text.
pub trait Responder: Send + Sync {
    fn id(&self) -> &str;
    fn answer(&self, query: &str) -> Result<String, EvalError>;
}

/// Extract the five-field call from a reply: a bare or embedded JSON object,
/// with or without a `request` field.
pub fn parse_call(text: &str) -> Option<CallOutput> {
    let text = text.trim();
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            if let Ok(mut call) = serde_json::from_value::<CallOutput>(v) {
                call.method = call.method.trim().to_ascii_lowercase();
                return Some(call);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub score: u8,
    /// Set when the judge's reply could not be read as a verdict.
    pub anomaly: bool,
}

pub trait Judge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, reference: &str, prediction: &str) -> Result<Verdict, EvalError>;
}

/// Offline judge: correct iff the parsed five fields are equal.
#[derive(Debug, Clone, Default)]
pub struct LocalJudge;

impl Judge for LocalJudge {
    fn id(&self) -> &str {
        "local-exact"
    }

    fn judge(&self, reference: &str, prediction: &str) -> Result<Verdict, EvalError> {
        let correct = match (parse_call(reference), parse_call(prediction)) {
            (Some(r), Some(p)) => r == p,
            (None, _) => reference.trim() == prediction.trim(),
            (Some(_), None) => false,
        };
        Ok(Verdict {
            score: u8::from(correct),
            anomaly: false,
        })
    }
}

const JUDGE_SYSTEM: &str = "You grade predicted REST API calls against a reference. Answer with one word.";

/// Model-graded verdicts through a chat provider, temperature 0.
pub struct LlmJudge<P> {
    provider: P,
    id: String,
}

impl<P: Provider> LlmJudge<P> {
    pub fn new(provider: P) -> Self {
        let id = format!("llm:{}", provider.id());
        Self { provider, id }
    }
}

pub fn judge_prompt(reference: &str, prediction: &str) -> ChatRequest {
    let user = format!(
        "Reference:\n{reference}\n\nPrediction:\n{prediction}\n\n\
Does the prediction name the same api_call, the same HTTP method and the same parameters \
as the reference? Reply with exactly one word: CORRECT or INCORRECT."
    );
    ChatRequest::new(JUDGE_SYSTEM, user).with_max_output_tokens(4)
}

/// First word of the reply, ignoring case and surrounding punctuation.
pub fn parse_verdict(reply: &str) -> Option<u8> {
    let word: String = reply
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_ascii_alphabetic())
        .to_ascii_uppercase();
    match word.as_str() {
        "CORRECT" => Some(1),
        "INCORRECT" => Some(0),
        _ => None,
    }
}

impl<P: Provider> Judge for LlmJudge<P> {
    fn id(&self) -> &str {
        &self.id
    }

    fn judge(&self, reference: &str, prediction: &str) -> Result<Verdict, EvalError> {
        let reply = self.provider.chat(&judge_prompt(reference, prediction))?;
        Ok(match parse_verdict(&reply.text) {
            Some(score) => Verdict { score, anomaly: false },
            None => {
                log::warn!("unreadable judge verdict {:?}; scoring 0", reply.text);
                Verdict { score: 0, anomaly: true }
            }
        })
    }
}

/// One evaluation query and its reference output text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub query: String,
    pub reference: String,
}

impl EvalItem {
    pub fn from_record(rec: &SyntheticRecord) -> Self {
        Self {
            query: rec.request.clone(),
            reference: rec.output().to_canonical_json(),
        }
    }

    pub fn from_pair(pair: &InstructOutputPair) -> Self {
        Self {
            query: pair.instruct.clone(),
            reference: pair.output.clone(),
        }
    }
}

/// Returns the reference for every known query: a perfect responder.
pub struct EchoResponder {
    answers: HashMap<String, String>,
}

impl EchoResponder {
    pub fn new(items: &[EvalItem]) -> Self {
        Self {
            answers: items.iter().map(|i| (i.query.clone(), i.reference.clone())).collect(),
        }
    }
}

impl Responder for EchoResponder {
    fn id(&self) -> &str {
        "echo"
    }

    fn answer(&self, query: &str) -> Result<String, EvalError> {
        self.answers.get(query).cloned().ok_or_else(|| EvalError::Responder {
            id: "echo".into(),
            message: format!("unknown query {query:?}"),
        })
    }
}

pub struct ConstantResponder {
    text: String,
}

impl ConstantResponder {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl Responder for ConstantResponder {
    fn id(&self) -> &str {
        "constant"
    }

    fn answer(&self, _query: &str) -> Result<String, EvalError> {
        Ok(self.text.clone())
    }
}

/// Fixed answers per query, with a fallback for the rest.
pub struct ScriptedResponder {
    id: String,
    answers: HashMap<String, String>,
    fallback: String,
}

impl ScriptedResponder {
    pub fn new(id: impl Into<String>, answers: HashMap<String, String>, fallback: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            answers,
            fallback: fallback.into(),
        }
    }

    /// Echo the reference for the first `correct` items, `wrong` for the rest.
    pub fn correct_on_first(items: &[EvalItem], correct: usize, wrong: impl Into<String>) -> Self {
        let answers = items
            .iter()
            .take(correct)
            .map(|i| (i.query.clone(), i.reference.clone()))
            .collect();
        Self::new(format!("scripted-{correct}"), answers, wrong)
    }
}

impl Responder for ScriptedResponder {
    fn id(&self) -> &str {
        &self.id
    }

    fn answer(&self, query: &str) -> Result<String, EvalError> {
        Ok(self.answers.get(query).unwrap_or(&self.fallback).clone())
    }
}

/// Remote responder speaking `POST {url}` with `{"query"}` → `{"text"}`.
pub struct HttpResponder {
    id: String,
    url: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct AnswerRequest<'a> {
    query: &'a str,
}

#[derive(Deserialize)]
struct AnswerResponse {
    text: String,
}

impl HttpResponder {
    pub fn new(id: impl Into<String>, url: impl Into<String>, timeout: Duration) -> Result<Self, EvalError> {
        let id = id.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EvalError::Responder {
                id: id.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            id,
            url: url.into(),
            client,
        })
    }
}

impl Responder for HttpResponder {
    fn id(&self) -> &str {
        &self.id
    }

    fn answer(&self, query: &str) -> Result<String, EvalError> {
        let fail = |message: String| EvalError::Responder {
            id: self.id.clone(),
            message,
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&AnswerRequest { query })
            .send()
            .map_err(|e| fail(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(fail(format!("HTTP {status}")));
        }
        let body: AnswerResponse = resp.json().map_err(|e| fail(format!("bad response body: {e}")))?;
        Ok(body.text)
    }
}

/// The retrieval-augmented baseline; answers with the model's raw reply.
pub struct RagResponder<P> {
    id: String,
    index: Arc<VectorIndex>,
    provider: P,
    k: usize,
}

impl<P: Provider> RagResponder<P> {
    pub fn new(index: Arc<VectorIndex>, provider: P, k: usize) -> Self {
        let id = format!("rag:{}", provider.id());
        Self { id, index, provider, k }
    }
}

impl<P: Provider> Responder for RagResponder<P> {
    fn id(&self) -> &str {
        &self.id
    }

    fn answer(&self, query: &str) -> Result<String, EvalError> {
        answer_query(&self.index, query, self.k, &self.provider)
            .map(|a| a.raw_text)
            .map_err(|e| match e {
                crate::rag::RagError::Provider(g) => EvalError::Provider(g),
                other => EvalError::Responder {
                    id: self.id.clone(),
                    message: other.to_string(),
                },
            })
    }
}

/// Plain prompting with no retrieval.
pub struct ChatResponder<P> {
    id: String,
    provider: P,
    system_prompt: String,
}

impl<P: Provider> ChatResponder<P> {
    pub fn new(provider: P, system_prompt: impl Into<String>) -> Self {
        let id = format!("chat:{}", provider.id());
        Self {
            id,
            provider,
            system_prompt: system_prompt.into(),
        }
    }
}

impl<P: Provider> Responder for ChatResponder<P> {
    fn id(&self) -> &str {
        &self.id
    }

    fn answer(&self, query: &str) -> Result<String, EvalError> {
        let req = ChatRequest::new(self.system_prompt.clone(), query);
        Ok(self.provider.chat(&req)?.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub query: String,
    pub reference: String,
    pub prediction: String,
    pub judge_score: u8,
    pub similarity: Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub responder_id: String,
    pub judge_id: String,
    pub embedding_provider_id: String,
    pub tokenizer: String,
    pub judge_prompt: String,
    pub similarity_rescaled: bool,
    pub judge_anomalies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub iteration: usize,
    pub entries: Vec<EvalEntry>,
    pub accuracy_0_100: f64,
    pub mean_similarity: f64,
    pub metadata: ArtifactMetadata,
}

/// 100 × correct / total.
pub fn accuracy_percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

fn evaluate_entry<R, J, P>(responder: &R, judge: &J, provider: &P, item: &EvalItem) -> Result<(EvalEntry, bool), EvalError>
where
    R: Responder + ?Sized,
    J: Judge + ?Sized,
    P: Provider + ?Sized,
{
    let prediction = responder.answer(&item.query)?;
    let verdict = judge.judge(&item.reference, &prediction)?;
    let cand = tokenize(&prediction);
    let refs = tokenize(&item.reference);
    let similarity = if cand.is_empty() || refs.is_empty() {
        Similarity::ZERO
    } else {
        similarity_f1(&cand, &refs, provider)?
    };
    Ok((
        EvalEntry {
            query: item.query.clone(),
            reference: item.reference.clone(),
            prediction,
            judge_score: verdict.score,
            similarity,
        },
        verdict.anomaly,
    ))
}

/// Query the responder on every item and score each answer.
pub fn run_iteration<R, J, P>(
    responder: &R,
    eval_set: &[EvalItem],
    judge: &J,
    provider: &P,
    iteration: usize,
) -> Result<EvalArtifact, EvalError>
where
    R: Responder + ?Sized,
    J: Judge + ?Sized,
    P: Provider + ?Sized,
{
    if eval_set.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let results: Vec<Result<(EvalEntry, bool), EvalError>> = eval_set
        .par_iter()
        .map(|item| evaluate_entry(responder, judge, provider, item))
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut anomalies = 0;
    for r in results {
        match r {
            Ok((entry, anomaly)) => {
                anomalies += usize::from(anomaly);
                entries.push(entry);
            }
            Err(source) => {
                return Err(EvalError::Iteration {
                    iteration,
                    partial: entries,
                    source: Box::new(source),
                })
            }
        }
    }
    let correct = entries.iter().filter(|e| e.judge_score == 1).count();
    let mean_similarity = entries.iter().map(|e| e.similarity.f1).sum::<f64>() / entries.len() as f64;
    Ok(EvalArtifact {
        iteration,
        accuracy_0_100: accuracy_percent(correct, entries.len()),
        mean_similarity,
        entries,
        metadata: ArtifactMetadata {
            responder_id: responder.id().to_string(),
            judge_id: judge.id().to_string(),
            embedding_provider_id: provider.id().to_string(),
            tokenizer: TOKENIZER_ID.into(),
            judge_prompt: JUDGE_PROMPT_VERSION.into(),
            similarity_rescaled: false,
            judge_anomalies: anomalies,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMin {
    pub max: f64,
    pub min: f64,
}

impl MaxMin {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| {
            Some(match acc {
                None => MaxMin { max: v, min: v },
                Some(m) => MaxMin {
                    max: m.max.max(v),
                    min: m.min.min(v),
                },
            })
        })
    }
}

/// Per-responder row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub responder_id: String,
    pub iterations: usize,
    pub accuracy: MaxMin,
    pub similarity: MaxMin,
}

impl EvalSummary {
    pub fn from_artifacts(responder_id: impl Into<String>, artifacts: &[EvalArtifact]) -> Option<Self> {
        Some(Self {
            responder_id: responder_id.into(),
            iterations: artifacts.len(),
            accuracy: MaxMin::of(artifacts.iter().map(|a| a.accuracy_0_100))?,
            similarity: MaxMin::of(artifacts.iter().map(|a| a.mean_similarity))?,
        })
    }
}

pub const SUMMARY_FILE: &str = "eval-summary.json";

pub fn artifact_file_name(iteration: usize) -> String {
    format!("eval-iter-{iteration:03}.json")
}

/// Directory under `artifact_dir` holding one responder's iteration files.
pub fn responder_dir(artifact_dir: &Path, responder_id: &str) -> PathBuf {
    let safe: String = responder_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    artifact_dir.join(safe)
}

/// Run `iterations` sequential iterations, writing
/// `<artifact_dir>/<responder>/eval-iter-NNN.json` after each, then merge this
/// responder's row into `<artifact_dir>/eval-summary.json`.
pub fn run_protocol<R, J, P>(
    responder: &R,
    eval_set: &[EvalItem],
    judge: &J,
    provider: &P,
    iterations: usize,
    artifact_dir: &Path,
) -> Result<EvalSummary, EvalError>
where
    R: Responder + ?Sized,
    J: Judge + ?Sized,
    P: Provider + ?Sized,
{
    if iterations == 0 {
        return Err(EvalError::ZeroIterations);
    }
    if eval_set.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let dir = responder_dir(artifact_dir, responder.id());
    let mut artifacts = Vec::with_capacity(iterations);
    for iteration in 1..=iterations {
        let artifact = run_iteration(responder, eval_set, judge, provider, iteration)?;
        write_json_atomic(dir.join(artifact_file_name(iteration)), &artifact)?;
        log::info!(
            "{} iteration {iteration}: accuracy {:.4}, similarity {:.4}",
            responder.id(),
            artifact.accuracy_0_100,
            artifact.mean_similarity
        );
        artifacts.push(artifact);
    }
    let summary = EvalSummary::from_artifacts(responder.id(), &artifacts).expect("at least one iteration");
    let summary_path = artifact_dir.join(SUMMARY_FILE);
    let mut table = read_summary_table(&summary_path)?;
    table.insert(summary.responder_id.clone(), summary.clone());
    write_json_atomic(&summary_path, &table)?;
    Ok(summary)
}

/// The summary file: responder id → row. Missing file reads as empty.
pub fn read_summary_table(path: &Path) -> Result<BTreeMap<String, EvalSummary>, EvalError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| EvalError::Format(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn read_artifact(path: &Path) -> Result<EvalArtifact, EvalError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| EvalError::Format(format!("{}: {e}", path.display())))
}
