//! In-memory HTTP stand-in for a NEF emulator, driven by a flattened spec.
//!
//! The token endpoint checks form credentials and issues bearer tokens. The
//! QoS subscription endpoints read from seeded state. Every other endpoint
//! answers with a body synthesized from its response schema.

use std::collections::{BTreeMap, HashSet};
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::spec::schema::{example_value, validate};
use crate::spec::{lookup_endpoint, match_template, ApiSpec, BodyEncoding, EndpointDef, HttpMethod};

pub const TEST_USERNAME: &str = "admin";
pub const TEST_PASSWORD: &str = "admin";

const QOS_LIST: &str = "/api/v1/3gpp-as-session-with-qos/v1/{scsAsId}/subscriptions";
const QOS_ONE: &str = "/api/v1/3gpp-as-session-with-qos/v1/{scsAsId}/subscriptions/{subscriptionId}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub method: String,
    pub path: String,
    pub status: u16,
}

/// Seed data and credentials for a server instance.
#[derive(Debug, Clone)]
pub struct ServerFixtures {
    pub username: String,
    pub password: String,
    /// scsAsId → (subscription id, subscription object)
    pub subscriptions: BTreeMap<String, Vec<(String, Value)>>,
}

impl ServerFixtures {
    /// Test credentials and one QoS subscription ("1") under SCS1, shaped by
    /// the spec's subscription schema.
    pub fn standard(spec: &ApiSpec) -> Self {
        let mut subscriptions = BTreeMap::new();
        if let Some(schema) = spec
            .endpoint(QOS_ONE, HttpMethod::Get)
            .and_then(|e| e.response_schema.as_ref())
        {
            let mut sub = example_value(schema);
            if let Some(obj) = sub.as_object_mut() {
                if obj.contains_key("self") {
                    obj.insert(
                        "self".into(),
                        json!("http://localhost/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions/1"),
                    );
                }
            }
            subscriptions.insert("SCS1".to_string(), vec![("1".to_string(), sub)]);
        }
        Self {
            username: TEST_USERNAME.into(),
            password: TEST_PASSWORD.into(),
            subscriptions,
        }
    }
}

struct Inner {
    tokens: HashSet<String>,
    subscriptions: BTreeMap<String, Vec<(String, Value)>>,
    log: Vec<LogEntry>,
}

struct ServerState {
    spec: ApiSpec,
    username: String,
    password: String,
    inner: Mutex<Inner>,
}

/// A running server. Dropping the handle stops it.
pub struct MockNefServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

/// Bind synchronously, then serve on a background runtime.
pub fn serve(spec: ApiSpec, bind_address: &str, fixtures: ServerFixtures) -> std::io::Result<MockNefServer> {
    let listener = TcpListener::bind(bind_address)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let state = Arc::new(ServerState {
        spec,
        username: fixtures.username,
        password: fixtures.password,
        inner: Mutex::new(Inner {
            tokens: HashSet::new(),
            subscriptions: fixtures.subscriptions,
            log: Vec::new(),
        }),
    });
    let (tx, rx) = oneshot::channel::<()>();
    let app = Router::new().fallback(handle).with_state(Arc::clone(&state));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let thread = std::thread::Builder::new()
        .name("nef-mock".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(MockNefServer {
        addr,
        state,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

impl MockNefServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Chronological snapshot of handled requests.
    pub fn request_log(&self) -> Vec<LogEntry> {
        self.state.inner.lock().expect("state lock").log.clone()
    }

    /// Block until the server exits (it only exits on shutdown or error).
    pub fn wait(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for MockNefServer {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn detail(status: StatusCode, message: &str) -> (StatusCode, Value) {
    (status, json!({ "detail": message }))
}

async fn handle(
    State(state): State<Arc<ServerState>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let path = uri.path().to_string();
    let (status, payload) = respond(&state, &method, &path, &headers, &body);
    let mut inner = state.inner.lock().expect("state lock");
    inner.log.push(LogEntry {
        method: method.as_str().to_ascii_lowercase(),
        path,
        status: status.as_u16(),
    });
    drop(inner);
    let mut resp = (status, Json(payload)).into_response();
    if status == StatusCode::UNAUTHORIZED {
        resp.headers_mut()
            .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
    }
    resp
}

fn respond(state: &ServerState, method: &Method, path: &str, headers: &HeaderMap, body: &[u8]) -> (StatusCode, Value) {
    let spec = &state.spec;
    let Some(endpoint) = lookup_endpoint(spec, path, method.as_str()) else {
        let known = HttpMethod::ALL.iter().any(|m| lookup_endpoint(spec, path, m.as_str()).is_some());
        return if known {
            detail(StatusCode::METHOD_NOT_ALLOWED, "Method Not Allowed")
        } else {
            detail(StatusCode::NOT_FOUND, "Not Found")
        };
    };
    if spec.token_endpoint().is_some_and(|t| std::ptr::eq(t, endpoint)) {
        return login(state, body);
    }
    if endpoint.requires_auth && !authorized(state, headers) {
        return detail(StatusCode::UNAUTHORIZED, "Not authenticated");
    }
    if let Err(problems) = check_body(endpoint, body) {
        return (StatusCode::UNPROCESSABLE_ENTITY, json!({ "detail": problems }));
    }
    let bindings = match_template(&endpoint.path, path).unwrap_or_default();
    let status = StatusCode::from_u16(endpoint.success_status).unwrap_or(StatusCode::OK);
    let inner = state.inner.lock().expect("state lock");
    match endpoint.path.as_str() {
        QOS_LIST => {
            let subs = inner
                .subscriptions
                .get(bindings.get("scsAsId").map(String::as_str).unwrap_or(""))
                .map(|v| v.iter().map(|(_, s)| s.clone()).collect())
                .unwrap_or_default();
            (status, Value::Array(subs))
        }
        QOS_ONE => {
            let scs = bindings.get("scsAsId").map(String::as_str).unwrap_or("");
            let id = bindings.get("subscriptionId").map(String::as_str).unwrap_or("");
            match inner
                .subscriptions
                .get(scs)
                .and_then(|subs| subs.iter().find(|(sid, _)| sid == id))
            {
                Some((_, sub)) => (status, sub.clone()),
                None => detail(StatusCode::NOT_FOUND, "Subscription not found"),
            }
        }
        _ => (
            status,
            endpoint.response_schema.as_ref().map(example_value).unwrap_or_else(|| json!({})),
        ),
    }
}

fn authorized(state: &ServerState, headers: &HeaderMap) -> bool {
    let Some(value) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) else {
        return false;
    };
    let Some((scheme, token)) = value.split_once(' ') else {
        return false;
    };
    scheme.eq_ignore_ascii_case("bearer") && state.inner.lock().expect("state lock").tokens.contains(token.trim())
}

fn login(state: &ServerState, body: &[u8]) -> (StatusCode, Value) {
    let form: BTreeMap<String, String> = form_urlencoded::parse(body).into_owned().collect();
    let missing: Vec<&str> = ["username", "password"]
        .into_iter()
        .filter(|f| !form.contains_key(*f))
        .collect();
    if !missing.is_empty() {
        return (
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "detail": format!("missing form field(s): {}", missing.join(", ")) }),
        );
    }
    if form.get("grant_type").is_some_and(|g| g != "password") {
        return detail(StatusCode::BAD_REQUEST, "unsupported grant_type");
    }
    if form["username"] != state.username || form["password"] != state.password {
        return detail(StatusCode::UNAUTHORIZED, "Incorrect username or password");
    }
    let token = uuid::Uuid::new_v4().simple().to_string();
    state.inner.lock().expect("state lock").tokens.insert(token.clone());
    (StatusCode::OK, json!({ "access_token": token, "token_type": "bearer" }))
}

fn check_body(endpoint: &EndpointDef, body: &[u8]) -> Result<(), Vec<String>> {
    let (Some(schema), Some(BodyEncoding::Json)) = (&endpoint.request_body_schema, endpoint.body_encoding) else {
        return Ok(());
    };
    let value: Value = serde_json::from_slice(body).map_err(|e| vec![format!("body is not JSON: {e}")])?;
    let problems = validate(&value, schema);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}
