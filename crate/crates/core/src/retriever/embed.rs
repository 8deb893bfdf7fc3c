use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has non-finite component at {0}")]
    NonFinite(usize),
    #[error("embedding has zero length")]
    NoDimensions,
    #[error("expected {expected} dimensions, got {actual}")]
    Dims { expected: usize, actual: usize },
    #[error("embedding backend at {endpoint} failed: {detail}")]
    Backend { endpoint: String, detail: String },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Backend { .. })
    }
}

/// A dense embedding. Components are finite; length is at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::NoDimensions);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how",
    "in", "is", "it", "of", "on", "or", "that", "the", "this", "to", "was", "what", "which",
    "who", "why", "with",
];

/// Seeded feature-hashing embedder for offline use and tests.
///
/// Every lowercase word (minus a short stopword list) and every adjacent word
/// pair maps to a pseudo-random direction derived from the seed; a text's
/// vector is the weighted sum. Identical text always yields the identical
/// vector and texts sharing vocabulary land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dims: usize,
    seed: u64,
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashEmbedder {
    pub fn new(id: impl Into<String>, dims: usize, seed: u64) -> Self {
        assert!(dims > 0, "embedding dims must be positive");
        Self {
            id: id.into(),
            dims,
            seed,
        }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str, weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, feature.as_bytes()));
        for slot in acc.iter_mut() {
            *slot += weight * rng.random_range(-1.0..1.0);
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let words: Vec<String> = crate::text::word_tokens(text)
            .filter(|w| !STOPWORDS.contains(&w.as_str()))
            .collect();
        let words = if words.is_empty() {
            // All stopwords: fall back to the raw tokens.
            crate::text::word_tokens(text).collect()
        } else {
            words
        };
        if words.is_empty() {
            // Punctuation only: hash the trimmed text itself.
            let mut acc = vec![0.0; self.dims];
            self.add_feature(&mut acc, text.trim(), 1.0);
            return EmbeddingVector::new(acc);
        }
        let mut acc = vec![0.0; self.dims];
        for w in &words {
            self.add_feature(&mut acc, w, 1.0);
        }
        for pair in words.windows(2) {
            self.add_feature(&mut acc, &format!("{} {}", pair[0], pair[1]), 0.5);
        }
        EmbeddingVector::new(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiEmbedderConfig {
    pub id: String,
    pub endpoint: String,
    pub model: String,
    pub dims: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

/// Client for `POST {endpoint}/embeddings` servers.
pub struct OpenAiEmbedder {
    config: OpenAiEmbedderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiEmbedder {
    pub fn new(config: OpenAiEmbedderConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }
}

impl Embedder for OpenAiEmbedder {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn dims(&self) -> usize {
        self.config.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let url = format!("{}/embeddings", self.config.endpoint.trim_end_matches('/'));
        let fail = |detail: String| EmbedError::Backend {
            endpoint: url.clone(),
            detail,
        };
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({"model": self.config.model, "input": text}))
            .map_err(|e| fail(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| fail(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(fail(format!("status {status}: {}", body.chars().take(300).collect::<String>())));
        }
        let parsed: Value = serde_json::from_str(&body).map_err(|e| fail(e.to_string()))?;
        let values: Vec<f64> = parsed["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| fail("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| fail("non-numeric embedding component".into())))
            .collect::<Result<_, _>>()?;
        if values.len() != self.config.dims {
            return Err(EmbedError::Dims {
                expected: self.config.dims,
                actual: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }
}
