use super::{
    check_embed_input, ChatRequest, ChatResponse, EmbeddingVector, GatewayError, Provider, TokenUsage,
};

pub const MOCK_FALLBACK: &str = "I cannot answer that request.";

/// Offline provider whose outputs are a pure function of its construction
/// parameters and the request.
///
/// `chat` returns the completion of the first registered trigger contained
/// in the user prompt (registration order), else [`MOCK_FALLBACK`].
/// `embed` returns [`hash_embedding`] of each text.
#[derive(Debug, Clone)]
pub struct MockProvider {
    id: String,
    seed: u64,
    dim: usize,
    canned: Vec<(String, String)>,
    fallback: String,
}

impl MockProvider {
    pub const MIN_DIM: usize = 8;

    pub fn new<I, K, V>(seed: u64, canned: I, dim: usize) -> Result<Self, GatewayError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        if dim < Self::MIN_DIM {
            return Err(GatewayError::InvalidConfig(format!(
                "mock embedding dimension {dim} is below {}",
                Self::MIN_DIM
            )));
        }
        Ok(Self {
            id: format!("mock-{seed}-{dim}"),
            seed,
            dim,
            canned: canned
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            fallback: MOCK_FALLBACK.to_string(),
        })
    }

    /// Embedding-only mock with no canned completions.
    pub fn embeddings(seed: u64, dim: usize) -> Result<Self, GatewayError> {
        Self::new(seed, Vec::<(String, String)>::new(), dim)
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let text = self
            .canned
            .iter()
            .find(|(trigger, _)| req.user_prompt.contains(trigger.as_str()))
            .map(|(_, completion)| completion.clone())
            .unwrap_or_else(|| self.fallback.clone());
        let words = |s: &str| s.split_whitespace().count() as u64;
        Ok(ChatResponse {
            token_usage: TokenUsage {
                prompt_tokens: words(&req.system_prompt) + words(&req.user_prompt),
                completion_tokens: words(&text),
            },
            text,
            provider_id: self.id.clone(),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_embed_input(texts)?;
        texts
            .iter()
            .map(|t| EmbeddingVector::new(hash_embedding(self.seed, self.dim, t), self.id.clone()))
            .collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian seed bytes followed by the token bytes,
/// finished with the SplitMix64 mixer.
fn seeded_hash(seed: u64, token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed feature hashing of whitespace tokens into `dim` buckets, L2-normalized.
///
/// Each token adds +1 or -1 (top hash bit set means -1) to bucket
/// `hash % dim`. If every bucket cancels to zero, the bucket of the hash of the
/// whole text is set to 1 so the vector is never all-zero.
pub fn hash_embedding(seed: u64, dim: usize, text: &str) -> Vec<f64> {
    let mut v = vec![0.0f64; dim];
    for token in text.split_whitespace() {
        let h = seeded_hash(seed, token);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[(seeded_hash(seed, text) % dim as u64) as usize] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}
