//! Chat-completion and embedding access over the OpenAI-compatible wire
//! protocol, plus a deterministic offline provider.

mod limit;
mod mock;
mod openai;
mod retry;

use serde::{Deserialize, Serialize};

pub use limit::InFlightLimit;
pub use mock::{hash_embedding, MockProvider, MOCK_FALLBACK};
pub use openai::OpenAiProvider;
pub use retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseFormat {
    #[default]
    FreeText,
    StrictStructured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_format: ResponseFormat,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            response_format: ResponseFormat::FreeText,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = max;
        self
    }

    pub fn structured(mut self) -> Self {
        self.response_format = ResponseFormat::StrictStructured;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::MalformedPayload("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::MalformedPayload("non-finite embedding value".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(GatewayError::MalformedPayload("all-zero embedding".into()));
        }
        Ok(Self {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Cosine similarity clamped to [-1, 1]; zero when either side has zero norm.
/// Identical non-zero vectors score exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|x| *x != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn default_max_in_flight() -> usize {
    4
}

fn default_json_mode() -> bool {
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself is never stored in configuration.
    pub api_key_env_name: String,
    pub model_name: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_base_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Ask the server for JSON mode on structured requests.
    #[serde(default = "default_json_mode")]
    pub json_mode: bool,
}

impl ProviderConfig {
    pub const MAX_RETRIES_LIMIT: u32 = 8;

    pub fn openai(model_name: impl Into<String>) -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env_name: "OPENAI_API_KEY".into(),
            model_name: model_name.into(),
            request_timeout_secs: 120.0,
            max_retries: 4,
            retry_backoff_base_secs: 1.0,
            max_in_flight: default_max_in_flight(),
            json_mode: false,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_retries > Self::MAX_RETRIES_LIMIT {
            return Err(GatewayError::InvalidConfig(format!(
                "max_retries {} exceeds {}",
                self.max_retries,
                Self::MAX_RETRIES_LIMIT
            )));
        }
        if !(self.request_timeout_secs > 0.0) || !self.request_timeout_secs.is_finite() {
            return Err(GatewayError::InvalidConfig("request timeout must be positive".into()));
        }
        if !(self.retry_backoff_base_secs >= 0.0) || !self.retry_backoff_base_secs.is_finite() {
            return Err(GatewayError::InvalidConfig("retry backoff must be non-negative".into()));
        }
        if self.api_key_env_name.trim().is_empty() {
            return Err(GatewayError::InvalidConfig("api_key_env_name is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig("max_in_flight must be positive".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::InvalidConfig(format!("base_url `{}`: {e}", self.base_url)))?;
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::new(
            self.max_retries,
            std::time::Duration::from_secs_f64(self.retry_backoff_base_secs),
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("API key environment variable `{var}` is not set")]
    MissingApiKey { var: String },
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("rate limited; gave up after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("server error HTTP {status} after {attempts} attempts: {message}")]
    ServerError {
        status: u16,
        attempts: u32,
        message: String,
    },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

impl GatewayError {
    /// Errors caused by configuration or environment rather than data.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            GatewayError::MissingApiKey { .. } | GatewayError::InvalidConfig(_) | GatewayError::Auth { .. }
        )
    }
}

/// A chat and embedding backend. Implementations are immutable after
/// construction and may be shared across threads.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// One vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(req)
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        (**self).embed(texts)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(req)
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        (**self).embed(texts)
    }
}

pub(crate) fn check_embed_input(texts: &[String]) -> Result<(), GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::InvalidRequest(format!("text {i} is empty")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("", "hi").validate().is_ok());
        assert!(ChatRequest::new("sys", "  ").validate().is_err());
        assert!(ChatRequest::new("", "hi").with_temperature(2.5).validate().is_err());
        assert!(ChatRequest::new("", "hi").with_max_output_tokens(0).validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::openai("gpt-4");
        assert!(cfg.validate().is_ok());
        cfg.max_retries = 9;
        assert!(cfg.validate().is_err());
        cfg.max_retries = 8;
        cfg.request_timeout_secs = 0.0;
        assert!(cfg.validate().is_err());
        cfg.request_timeout_secs = 1.0;
        cfg.base_url = "not a url".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embedding_invariants() {
        assert!(EmbeddingVector::new(vec![0.0; 4], "p").is_err());
        assert!(EmbeddingVector::new(vec![], "p").is_err());
        let v = EmbeddingVector::new(vec![0.0, 1.0], "p").unwrap();
        assert_eq!(v.dimension(), 2);
        assert_eq!(v.cosine(&v), 1.0);
    }

    #[test]
    fn cosine_handles_zero_norm() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-12);
    }
}
