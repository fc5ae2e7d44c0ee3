//! Chat-completion and embedding backends.
//!
//! Transports ([`ChatTransport`], [`EmbedTransport`]) perform exactly one
//! request. [`Backends`] wraps them with validation, retries, rate limiting,
//! an in-flight cap and the call ledger. Offline mocks live in [`mock`].

mod client;
mod limit;
pub mod mock;
mod openai;
mod retry;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{Backends, CallLedger, LedgerSummary};
pub use limit::{InFlightLimit, TokenBucket};
pub use openai::{OpenAiChat, OpenAiEmbed, API_KEY_ENV};
pub use retry::{Clock, FakeClock, RetryPolicy, SystemClock};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Rate limiting, server errors, timeouts and connection failures.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("transient failures persisted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("request rejected (status {status}): {message}")]
    Permanent { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for request digest {0}")]
    Unscripted(String),
    #[error("{0} backend is not configured")]
    NotConfigured(&'static str),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot take the cosine of a zero vector")]
    ZeroVector,
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transient(_))
    }

    /// Maps an HTTP status to the error taxonomy.
    pub fn from_status(status: u16, message: impl Into<String>) -> Self {
        let message = message.into();
        match status {
            429 | 500..=599 => Self::Transient(format!("status {status}: {message}")),
            401 | 403 => Self::Authentication(format!("status {status}: {message}")),
            _ => Self::Permanent { status, message },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// SHA-256 (hex) of the compact JSON serialization of a message list. This
/// is the key mock transcripts are looked up by.
pub fn digest_messages(messages: &[ChatMessage]) -> String {
    digest_str(&serde_json::to_string(messages).expect("messages serialize"))
}

pub fn digest_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
}

impl CompletionParams {
    pub fn new(model: impl Into<String>, temperature: f64) -> Self {
        Self {
            model: model.into(),
            temperature,
            max_tokens: 512,
            request_timeout: Duration::from_secs(60),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Malformed("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Malformed("non-finite embedding value".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit Euclidean norm.
    pub fn normalized(self) -> Result<Self, BackendError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(BackendError::ZeroVector);
        }
        Ok(Self(self.0.into_iter().map(|v| v / norm).collect()))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = BackendError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, BackendError> {
    if a.dimension() != b.dimension() {
        return Err(BackendError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(BackendError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Embed,
}

/// Audit record of one logical backend request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCall {
    pub kind: CallKind,
    pub request_digest: String,
    /// Empty when the request failed.
    pub response_digest: String,
    #[serde(with = "duration_secs")]
    pub latency: Duration,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempt_count: u32,
    pub ok: bool,
}

/// Raw result of one chat request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbedReply {
    pub values: Vec<f64>,
    pub prompt_tokens: u64,
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, messages: &[ChatMessage], params: &CompletionParams)
        -> Result<ChatReply, BackendError>;
}

pub trait EmbedTransport: Send + Sync {
    fn send(&self, text: &str) -> Result<EmbedReply, BackendError>;
}

/// Result of [`Backends::complete`].
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub call: BackendCall,
}
