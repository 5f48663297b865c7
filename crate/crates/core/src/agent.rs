//! Deterministic execution of predicted API calls: turn a record into an
//! HTTP plan (logging in first when the endpoint is secured), run it, and
//! report per-step statuses.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::spec::{lookup_endpoint, match_template, path_placeholders, ApiSpec, BodyEncoding, ParamLocation};
use crate::synth::{validate_record, SyntheticRecord, Violation};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("no endpoint serves {method} {path}")]
    UnknownEndpoint { method: String, path: String },
    #[error("path placeholder `{name}` has no value")]
    UnsubstitutablePlaceholder { name: String },
    #[error("record does not validate: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidRecord(Vec<Violation>),
    #[error("endpoint requires auth but the spec declares no token endpoint")]
    NoTokenEndpoint,
    #[error("cannot reach {url}: {message}")]
    Unreachable { url: String, message: String },
    #[error("HTTP client setup: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

impl Credentials {
    pub fn new(username: impl Into<String>, password: impl Into<String>) -> Self {
        Self {
            username: username.into(),
            password: password.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", content = "fields", rename_all = "lowercase")]
pub enum Payload {
    Json(Value),
    Form(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub method: String,
    /// Concrete path, placeholders substituted.
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub headers: BTreeMap<String, String>,
    pub body: Option<Payload>,
    pub needs_auth: bool,
    /// A login inserted by the planner; its token authorizes later steps.
    pub is_auth_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub steps: Vec<PlanStep>,
    pub source_record: SyntheticRecord,
}

/// Coerce parameter text to the JSON type declared for a body field.
fn typed_value(text: &str, value_type: &str) -> Value {
    let parsed = match value_type {
        "integer" => text.trim().parse::<i64>().ok().map(Value::from),
        "number" => text.trim().parse::<f64>().ok().and_then(|f| serde_json::Number::from_f64(f).map(Value::Number)),
        "boolean" => text.trim().parse::<bool>().ok().map(Value::Bool),
        "object" | "array" => serde_json::from_str(text).ok(),
        _ => None,
    };
    parsed.unwrap_or_else(|| Value::String(text.to_string()))
}

fn login_step(token_path: &str, creds: &Credentials, is_auth_step: bool) -> PlanStep {
    PlanStep {
        method: "post".into(),
        path: token_path.to_string(),
        query: BTreeMap::new(),
        headers: BTreeMap::new(),
        body: Some(Payload::Form(BTreeMap::from([
            ("grant_type".to_string(), "password".to_string()),
            ("username".to_string(), creds.username.clone()),
            ("password".to_string(), creds.password.clone()),
        ]))),
        needs_auth: false,
        is_auth_step,
    }
}

/// Build the HTTP steps for a record.
///
/// Placeholders take their value from the record's parameters, or from the
/// api_call itself when it is already concrete. Calls to the token endpoint
/// use the supplied credentials in place of the record's example values.
pub fn plan(rec: &SyntheticRecord, spec: &ApiSpec, creds: &Credentials) -> Result<ExecutionPlan, AgentError> {
    let endpoint = lookup_endpoint(spec, &rec.api_call, &rec.method).ok_or_else(|| AgentError::UnknownEndpoint {
        method: rec.method.clone(),
        path: rec.api_call.clone(),
    })?;
    let bound = match_template(&endpoint.path, &rec.api_call).unwrap_or_default();
    let mut path = endpoint.path.clone();
    for name in path_placeholders(&endpoint.path) {
        let from_call = bound.get(&name).filter(|v| **v != format!("{{{name}}}"));
        let value = rec
            .parameters
            .get(&name)
            .or(from_call)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| AgentError::UnsubstitutablePlaceholder { name: name.clone() })?;
        path = path.replace(&format!("{{{name}}}"), value);
    }
    let report = validate_record(spec, rec, 0);
    if !report.is_valid() {
        return Err(AgentError::InvalidRecord(report.violations));
    }

    let token_endpoint = spec.token_endpoint();
    let is_token_call = token_endpoint.is_some_and(|t| std::ptr::eq(t, endpoint));
    let mut query = BTreeMap::new();
    let mut headers = BTreeMap::new();
    let mut json_body = Map::new();
    let mut form_body = BTreeMap::new();
    for (name, value) in &rec.parameters {
        let Some(def) = endpoint.parameter(name) else { continue };
        match def.location {
            ParamLocation::Path => {}
            ParamLocation::Query => {
                query.insert(name.clone(), value.clone());
            }
            ParamLocation::Header => {
                headers.insert(name.clone(), value.clone());
            }
            ParamLocation::Cookie => {
                headers.insert("cookie".into(), format!("{name}={value}"));
            }
            ParamLocation::BodyField => match endpoint.body_encoding {
                Some(BodyEncoding::Form) => {
                    form_body.insert(name.clone(), value.clone());
                }
                _ => {
                    json_body.insert(name.clone(), typed_value(value, &def.value_type));
                }
            },
        }
    }
    if is_token_call {
        form_body.insert("grant_type".into(), "password".into());
        form_body.insert("username".into(), creds.username.clone());
        form_body.insert("password".into(), creds.password.clone());
    }
    let body = match endpoint.body_encoding {
        Some(BodyEncoding::Form) => Some(Payload::Form(form_body)),
        Some(BodyEncoding::Json) => Some(Payload::Json(Value::Object(json_body))),
        None => None,
    };

    let mut steps = Vec::new();
    if endpoint.requires_auth {
        let token_path = spec.token_url.as_deref().ok_or(AgentError::NoTokenEndpoint)?;
        steps.push(login_step(token_path, creds, true));
    }
    steps.push(PlanStep {
        method: endpoint.method.as_str().to_string(),
        path,
        query,
        headers,
        body,
        needs_auth: endpoint.requires_auth,
        is_auth_step: false,
    });
    Ok(ExecutionPlan {
        steps,
        source_record: rec.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecVerdict {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub method: String,
    pub path: String,
    /// None when an auth step was satisfied by a cached token.
    pub status_code: Option<u16>,
    pub latency_ms: f64,
    pub body_excerpt: String,
    pub reused_token: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub steps: Vec<StepReport>,
    pub verdict: ExecVerdict,
    pub failure_reason: Option<String>,
}

const EXCERPT_CHARS: usize = 200;

/// HTTP client plus the bearer token obtained by the last auth step.
pub struct AgentSession {
    base_url: String,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl AgentSession {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AgentError::Client(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
            token: None,
        })
    }

    pub fn has_token(&self) -> bool {
        self.token.is_some()
    }

    /// Run steps in order, stopping at the first non-2xx status. An auth step
    /// is skipped when the session already holds a token.
    pub fn execute(&mut self, plan: &ExecutionPlan) -> Result<ExecutionReport, AgentError> {
        let mut reports = Vec::new();
        for step in &plan.steps {
            if step.is_auth_step && self.token.is_some() {
                reports.push(StepReport {
                    method: step.method.clone(),
                    path: step.path.clone(),
                    status_code: None,
                    latency_ms: 0.0,
                    body_excerpt: String::new(),
                    reused_token: true,
                });
                continue;
            }
            let (status, body, latency) = self.send(step)?;
            reports.push(StepReport {
                method: step.method.clone(),
                path: step.path.clone(),
                status_code: Some(status),
                latency_ms: latency.as_secs_f64() * 1000.0,
                body_excerpt: body.chars().take(EXCERPT_CHARS).collect(),
                reused_token: false,
            });
            if !(200..300).contains(&status) {
                return Ok(ExecutionReport {
                    steps: reports,
                    verdict: ExecVerdict::Failure,
                    failure_reason: Some(format!("{} {} returned HTTP {status}", step.method, step.path)),
                });
            }
            if step.is_auth_step {
                match serde_json::from_str::<Value>(&body)
                    .ok()
                    .and_then(|v| v.get("access_token").and_then(Value::as_str).map(String::from))
                {
                    Some(t) => self.token = Some(t),
                    None => {
                        return Ok(ExecutionReport {
                            steps: reports,
                            verdict: ExecVerdict::Failure,
                            failure_reason: Some("login response carried no access_token".into()),
                        })
                    }
                }
            }
        }
        Ok(ExecutionReport {
            steps: reports,
            verdict: ExecVerdict::Success,
            failure_reason: None,
        })
    }

    fn send(&self, step: &PlanStep) -> Result<(u16, String, Duration), AgentError> {
        let url = format!("{}{}", self.base_url, step.path);
        let method = reqwest::Method::from_bytes(step.method.to_ascii_uppercase().as_bytes())
            .map_err(|e| AgentError::Client(e.to_string()))?;
        let mut req = self.client.request(method, &url);
        if !step.query.is_empty() {
            req = req.query(&step.query);
        }
        for (k, v) in &step.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        if step.needs_auth {
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
        }
        req = match &step.body {
            Some(Payload::Json(v)) => req.json(v),
            Some(Payload::Form(f)) => req.form(f),
            None => req,
        };
        let started = Instant::now();
        let resp = req.send().map_err(|e| AgentError::Unreachable {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| AgentError::Unreachable {
            url,
            message: e.to_string(),
        })?;
        Ok((status, body, started.elapsed()))
    }
}

/// One-off execution with a fresh session.
pub fn execute(plan: &ExecutionPlan, base_url: &str) -> Result<ExecutionReport, AgentError> {
    AgentSession::new(base_url, Duration::from_secs(30))?.execute(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub index: usize,
    pub request: String,
    pub plan: Option<ExecutionPlan>,
    pub plan_error: Option<String>,
    pub report: Option<ExecutionReport>,
}

impl RecordOutcome {
    pub fn succeeded(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.verdict == ExecVerdict::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub outcomes: Vec<RecordOutcome>,
    pub succeeded: usize,
    pub pass_rate: f64,
}

/// Plan and execute each record in order over one session. Planning errors
/// count as failures; an unreachable server aborts the run.
pub fn run_records(
    records: &[SyntheticRecord],
    spec: &ApiSpec,
    creds: &Credentials,
    session: &mut AgentSession,
) -> Result<AgentRun, AgentError> {
    let mut outcomes = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let outcome = match plan(rec, spec, creds) {
            Ok(p) => {
                let report = session.execute(&p)?;
                RecordOutcome {
                    index,
                    request: rec.request.clone(),
                    plan: Some(p),
                    plan_error: None,
                    report: Some(report),
                }
            }
            Err(e) => RecordOutcome {
                index,
                request: rec.request.clone(),
                plan: None,
                plan_error: Some(e.to_string()),
                report: None,
            },
        };
        outcomes.push(outcome);
    }
    let succeeded = outcomes.iter().filter(|o| o.succeeded()).count();
    let pass_rate = if outcomes.is_empty() {
        0.0
    } else {
        succeeded as f64 / outcomes.len() as f64
    };
    Ok(AgentRun {
        outcomes,
        succeeded,
        pass_rate,
    })
}
