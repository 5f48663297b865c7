use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::retry::{run_with_retries, Attempt};
use super::{
    check_embed_input, ChatRequest, ChatResponse, EmbeddingVector, GatewayError, InFlightLimit,
    Provider, ProviderConfig, ResponseFormat, TokenUsage,
};

const STRUCTURED_SUFFIX: &str =
    "Respond with valid JSON only. Do not wrap it in code fences and do not add commentary.";

/// Client for servers speaking the OpenAI chat-completions and embeddings API.
pub struct OpenAiProvider {
    cfg: ProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
    id: String,
}

impl std::fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiProvider")
            .field("id", &self.id)
            .field("base_url", &self.cfg.base_url)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl OpenAiProvider {
    /// Build a client; the API key is read from the environment variable named in `cfg`.
    pub fn new(cfg: ProviderConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env_name)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::MissingApiKey {
                var: cfg.api_key_env_name.clone(),
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            id: format!("openai:{}", cfg.model_name),
            limit: InFlightLimit::new(cfg.max_in_flight),
            cfg,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn endpoint(&self, name: &str) -> String {
        format!("{}/{name}", self.cfg.base_url.trim_end_matches('/'))
    }

    fn post_json(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let _slot = self.limit.acquire();
        let policy = self.cfg.retry_policy();
        run_with_retries(&policy, std::thread::sleep, |attempt| {
            let started = Instant::now();
            let sent = self
                .client
                .post(url)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            let resp = match sent {
                Ok(r) => r,
                Err(e) if e.is_timeout() => return Attempt::Transient(GatewayError::Timeout { attempts: attempt }),
                Err(e) => {
                    return Attempt::Transient(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            };
            let status = resp.status().as_u16();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) if e.is_timeout() => return Attempt::Transient(GatewayError::Timeout { attempts: attempt }),
                Err(e) => {
                    return Attempt::Transient(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            };
            log::debug!("POST {url} -> {status} in {:?} (attempt {attempt})", started.elapsed());
            match status {
                200..=299 => match serde_json::from_str(&text) {
                    Ok(v) => Attempt::Done(v),
                    Err(e) => Attempt::Fatal(GatewayError::MalformedPayload(e.to_string())),
                },
                401 | 403 => Attempt::Fatal(GatewayError::Auth {
                    status,
                    message: excerpt(&text),
                }),
                429 => Attempt::Transient(GatewayError::RateLimited { attempts: attempt }),
                500..=599 => Attempt::Transient(GatewayError::ServerError {
                    status,
                    attempts: attempt,
                    message: excerpt(&text),
                }),
                _ => Attempt::Fatal(GatewayError::Http {
                    status,
                    message: excerpt(&text),
                }),
            }
        })
    }
}

impl Provider for OpenAiProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let mut system = req.system_prompt.clone();
        if req.response_format == ResponseFormat::StrictStructured {
            if !system.is_empty() {
                system.push_str("\n\n");
            }
            system.push_str(STRUCTURED_SUFFIX);
        }
        let mut messages = Vec::new();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user_prompt}));
        let mut body = json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if req.response_format == ResponseFormat::StrictStructured && self.cfg.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }

        let raw = self.post_json(&self.endpoint("chat/completions"), &body)?;
        let parsed: ChatCompletion =
            serde_json::from_value(raw).map_err(|e| GatewayError::MalformedPayload(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::MalformedPayload("response has no message content".into()))?;
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ChatResponse {
            text,
            token_usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            provider_id: self.id.clone(),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_embed_input(texts)?;
        let body = json!({"model": self.cfg.model_name, "input": texts});
        let raw = self.post_json(&self.endpoint("embeddings"), &body)?;
        let mut parsed: EmbeddingList =
            serde_json::from_value(raw).map_err(|e| GatewayError::MalformedPayload(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::MalformedPayload(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        let vectors: Vec<EmbeddingVector> = parsed
            .data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding, self.id.clone()))
            .collect::<Result<_, _>>()?;
        let dim = vectors[0].dimension();
        if vectors.iter().any(|v| v.dimension() != dim) {
            return Err(GatewayError::MalformedPayload("embeddings differ in dimension".into()));
        }
        Ok(vectors)
    }
}

fn excerpt(text: &str) -> String {
    const MAX: usize = 300;
    match text.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}
