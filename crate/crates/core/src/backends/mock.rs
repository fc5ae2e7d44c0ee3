//! Deterministic offline backends.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    digest_messages, BackendError, ChatMessage, ChatReply, ChatTransport, CompletionParams,
    EmbedReply, EmbedTransport,
};
use crate::data::DataError;

/// Chat transport backed by a closure.
pub struct FnChat<F> {
    respond: F,
}

impl<F> FnChat<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond }
    }
}

impl<F> ChatTransport for FnChat<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync,
{
    fn send(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<ChatReply, BackendError> {
        (self.respond)(messages).map(ChatReply::text)
    }
}

/// Replays responses keyed by [`digest_messages`]. Unknown digests are an
/// error, so tests pin prompts byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptChat {
    responses: BTreeMap<String, String>,
}

impl TranscriptChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, messages: &[ChatMessage], response: impl Into<String>) {
        self.responses.insert(digest_messages(messages), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Reads a JSON object mapping digest to response.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let responses = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Self { responses })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(&self.responses).expect("transcript serializes");
        std::fs::write(path, text + "\n").map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl ChatTransport for TranscriptChat {
    fn send(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<ChatReply, BackendError> {
        let digest = digest_messages(messages);
        self.responses
            .get(&digest)
            .map(ChatReply::text)
            .ok_or(BackendError::Unscripted(digest))
    }
}

/// Fails with a queue of injected errors before delegating to `inner`.
pub struct FaultInjectingChat {
    inner: Arc<dyn ChatTransport>,
    faults: Mutex<Vec<BackendError>>,
    attempts: AtomicUsize,
}

impl FaultInjectingChat {
    pub fn new(inner: Arc<dyn ChatTransport>, faults: Vec<BackendError>) -> Self {
        let mut faults = faults;
        faults.reverse();
        Self {
            inner,
            faults: Mutex::new(faults),
            attempts: AtomicUsize::new(0),
        }
    }

    /// `count` transient (HTTP 503) failures, then success.
    pub fn transient(inner: Arc<dyn ChatTransport>, count: usize) -> Self {
        Self::new(
            inner,
            (0..count)
                .map(|_| BackendError::from_status(503, "injected"))
                .collect(),
        )
    }

    /// Requests received, including failed ones.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl ChatTransport for FaultInjectingChat {
    fn send(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ChatReply, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        if let Some(fault) = self.faults.lock().unwrap().pop() {
            return Err(fault);
        }
        self.inner.send(messages, params)
    }
}

/// Delegates the first `limit` requests, then rejects every request with a
/// permanent error. Simulates a run dying part way through.
pub struct CutoffChat {
    inner: Arc<dyn ChatTransport>,
    limit: usize,
    served: AtomicUsize,
}

impl CutoffChat {
    pub fn new(inner: Arc<dyn ChatTransport>, limit: usize) -> Self {
        Self {
            inner,
            limit,
            served: AtomicUsize::new(0),
        }
    }
}

impl ChatTransport for CutoffChat {
    fn send(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ChatReply, BackendError> {
        if self.served.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(BackendError::Permanent {
                status: 400,
                message: "cut off".into(),
            });
        }
        self.inner.send(messages, params)
    }
}

/// Offline stand-in for a real model that understands this crate's own
/// prompts: generation prompts get a numbered list of synthetic utterances
/// and classification prompts get the first listed class.
#[derive(Debug, Default, Clone, Copy)]
pub struct SyntheticChat;

impl SyntheticChat {
    fn generate(prompt: &str) -> String {
        let count = crate::mixgen::requested_count(prompt).unwrap_or(1);
        let topic = crate::mixgen::requested_majority(prompt)
            .unwrap_or("general")
            .replace('_', " ");
        let tag = &super::digest_str(prompt)[..8];
        (1..=count)
            .map(|i| format!("{i}. a question about {topic} number {i} ref {tag}\n"))
            .collect()
    }
}

impl ChatTransport for SyntheticChat {
    fn send(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<ChatReply, BackendError> {
        let system = messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let prompt = messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        if system == crate::mixgen::generation_system_prompt() {
            Ok(ChatReply::text(Self::generate(prompt)))
        } else if system == crate::relabel::relabel_system_prompt() {
            crate::template::listed_classes(prompt)
                .into_iter()
                .next()
                .map(ChatReply::text)
                .ok_or_else(|| BackendError::Malformed("no classes listed in prompt".into()))
        } else {
            Err(BackendError::InvalidRequest("unrecognized prompt".into()))
        }
    }
}

/// Embedding transport backed by a closure.
pub struct FnEmbedder<F> {
    embed: F,
}

impl<F> FnEmbedder<F>
where
    F: Fn(&str) -> Result<Vec<f64>, BackendError> + Send + Sync,
{
    pub fn new(embed: F) -> Self {
        Self { embed }
    }
}

impl<F> EmbedTransport for FnEmbedder<F>
where
    F: Fn(&str) -> Result<Vec<f64>, BackendError> + Send + Sync,
{
    fn send(&self, text: &str) -> Result<EmbedReply, BackendError> {
        (self.embed)(text).map(|values| EmbedReply {
            values,
            prompt_tokens: 0,
        })
    }
}

/// Fixed text-to-vector table; unknown text is an error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbedder {
    vectors: HashMap<String, Vec<f64>>,
}

impl ScriptedEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) {
        self.vectors.insert(text.into(), vector);
    }
}

impl EmbedTransport for ScriptedEmbedder {
    fn send(&self, text: &str) -> Result<EmbedReply, BackendError> {
        self.vectors
            .get(text)
            .map(|v| EmbedReply {
                values: v.clone(),
                prompt_tokens: 0,
            })
            .ok_or_else(|| BackendError::Unscripted(text.to_string()))
    }
}

/// Hashed bag-of-tokens embedder.
///
/// Text is lowercased and split into runs of alphanumeric characters, so
/// `atm_support` and `ATM support` share both tokens. Each token is hashed
/// with 64-bit FNV-1a into one of `dimension` buckets; the count vector is
/// L2-normalized. Text without alphanumerics is treated as one token.
#[derive(Debug, Clone, Copy)]
pub struct HashedTokenEmbedder {
    dimension: usize,
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

impl HashedTokenEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let tokens: Vec<String> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if tokens.is_empty() && !lower.trim().is_empty() {
            vec![lower.trim().to_string()]
        } else {
            tokens
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.dimension];
        for token in Self::tokens(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|c| *c /= norm);
        }
        counts
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

impl EmbedTransport for HashedTokenEmbedder {
    fn send(&self, text: &str) -> Result<EmbedReply, BackendError> {
        Ok(EmbedReply {
            values: self.vector(text),
            prompt_tokens: Self::tokens(text).len() as u64,
        })
    }
}
