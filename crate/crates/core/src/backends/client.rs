use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    digest_messages, digest_str, BackendCall, BackendError, CallKind, ChatMessage, ChatTransport,
    Clock, Completion, CompletionParams, EmbedTransport, EmbeddingVector, InFlightLimit, Role,
    RetryPolicy, SystemClock, TokenBucket,
};

/// Append-only record of every logical backend request.
#[derive(Debug, Default)]
pub struct CallLedger {
    calls: Mutex<Vec<BackendCall>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub chat_calls: usize,
    pub embed_calls: usize,
    pub failed_calls: usize,
    pub attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_secs: f64,
}

impl LedgerSummary {
    /// Field-wise sum, used to carry totals across resumed sessions.
    pub fn merged(&self, other: &Self) -> Self {
        Self {
            chat_calls: self.chat_calls + other.chat_calls,
            embed_calls: self.embed_calls + other.embed_calls,
            failed_calls: self.failed_calls + other.failed_calls,
            attempts: self.attempts + other.attempts,
            prompt_tokens: self.prompt_tokens + other.prompt_tokens,
            completion_tokens: self.completion_tokens + other.completion_tokens,
            latency_secs: self.latency_secs + other.latency_secs,
        }
    }
}

impl CallLedger {
    pub fn record(&self, call: BackendCall) {
        self.calls.lock().unwrap().push(call);
    }

    pub fn len(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn calls(&self) -> Vec<BackendCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self, kind: CallKind) -> usize {
        self.calls.lock().unwrap().iter().filter(|c| c.kind == kind).count()
    }

    pub fn summary(&self) -> LedgerSummary {
        self.summary_since(0)
    }

    /// Summary of the calls recorded after the first `start`.
    pub fn summary_since(&self, start: usize) -> LedgerSummary {
        let calls = self.calls.lock().unwrap();
        let mut s = LedgerSummary::default();
        for c in calls.iter().skip(start) {
            match c.kind {
                CallKind::Chat => s.chat_calls += 1,
                CallKind::Embed => s.embed_calls += 1,
            }
            if !c.ok {
                s.failed_calls += 1;
            }
            s.attempts += u64::from(c.attempt_count);
            s.prompt_tokens += c.prompt_tokens;
            s.completion_tokens += c.completion_tokens;
            s.latency_secs += c.latency.as_secs_f64();
        }
        s
    }
}

/// Chat and embedding backends behind one retry, rate-limit and audit
/// policy. Safe to share across threads.
pub struct Backends {
    chat: Option<Arc<dyn ChatTransport>>,
    embed: Option<Arc<dyn EmbedTransport>>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    bucket: Option<TokenBucket>,
    in_flight: InFlightLimit,
    ledger: CallLedger,
    dimension: OnceLock<usize>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("chat", &self.chat.is_some())
            .field("embed", &self.embed.is_some())
            .field("retry", &self.retry)
            .field("max_in_flight", &self.in_flight.cap())
            .field("calls", &self.ledger.len())
            .finish()
    }
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            chat: None,
            embed: None,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::default()),
            bucket: None,
            in_flight: InFlightLimit::new(4),
            ledger: CallLedger::default(),
            dimension: OnceLock::new(),
        }
    }
}

impl Backends {
    pub fn new(chat: Arc<dyn ChatTransport>, embed: Arc<dyn EmbedTransport>) -> Self {
        Self::default().with_chat(chat).with_embed(embed)
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatTransport>) -> Self {
        self.chat = Some(chat);
        self
    }

    pub fn with_embed(mut self, embed: Arc<dyn EmbedTransport>) -> Self {
        self.embed = Some(embed);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replaces the clock. Resets any configured rate limit origin.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_requests_per_minute(mut self, rpm: Option<u32>) -> Self {
        self.bucket = rpm.map(|r| TokenBucket::per_minute(r, self.clock.now()));
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = InFlightLimit::new(cap);
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.in_flight.cap()
    }

    pub fn has_embedder(&self) -> bool {
        self.embed.is_some()
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    /// Sends a chat request and returns the assistant text with trailing
    /// whitespace removed.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<Completion, BackendError> {
        let chat = self.chat.as_ref().ok_or(BackendError::NotConfigured("chat"))?;
        validate_messages(messages)?;
        params.validate()?;
        let request_digest = digest_messages(messages);
        let start = self.clock.now();
        let (result, attempts) = self.with_retries(|| chat.send(messages, params));
        let latency = self.clock.now().saturating_sub(start);
        match result {
            Ok(reply) => {
                let text = reply.text.trim_end().to_string();
                let call = BackendCall {
                    kind: CallKind::Chat,
                    request_digest,
                    response_digest: digest_str(&text),
                    latency,
                    prompt_tokens: reply.prompt_tokens,
                    completion_tokens: reply.completion_tokens,
                    attempt_count: attempts,
                    ok: true,
                };
                self.ledger.record(call.clone());
                Ok(Completion { text, call })
            }
            Err(err) => {
                self.record_failure(CallKind::Chat, request_digest, latency, attempts);
                Err(err)
            }
        }
    }

    /// Embeds `text` and returns a unit-norm vector.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let embed = self.embed.as_ref().ok_or(BackendError::NotConfigured("embedding"))?;
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let request_digest = digest_str(text);
        let start = self.clock.now();
        let (result, attempts) = self.with_retries(|| embed.send(text));
        let latency = self.clock.now().saturating_sub(start);
        let vector = result.and_then(|reply| {
            let tokens = reply.prompt_tokens;
            let v = EmbeddingVector::new(reply.values)?.normalized()?;
            let expected = *self.dimension.get_or_init(|| v.dimension());
            if v.dimension() != expected {
                return Err(BackendError::DimensionMismatch {
                    expected,
                    found: v.dimension(),
                });
            }
            Ok((v, tokens))
        });
        match vector {
            Ok((v, tokens)) => {
                let bytes: Vec<u8> = v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
                self.ledger.record(BackendCall {
                    kind: CallKind::Embed,
                    request_digest,
                    response_digest: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes)),
                    latency,
                    prompt_tokens: tokens,
                    completion_tokens: 0,
                    attempt_count: attempts,
                    ok: true,
                });
                Ok(v)
            }
            Err(err) => {
                self.record_failure(CallKind::Embed, request_digest, latency, attempts);
                Err(err)
            }
        }
    }

    fn with_retries<T>(
        &self,
        mut send: impl FnMut() -> Result<T, BackendError>,
    ) -> (Result<T, BackendError>, u32) {
        let max = self.retry.max_attempts();
        let mut attempt = 1;
        loop {
            if let Some(bucket) = &self.bucket {
                bucket.acquire(self.clock.as_ref());
            }
            let result = {
                let _slot = self.in_flight.acquire();
                send()
            };
            match result {
                Err(err) if err.is_transient() => {
                    if attempt >= max {
                        return (
                            Err(BackendError::RetriesExhausted {
                                attempts: attempt,
                                last: err.to_string(),
                            }),
                            attempt,
                        );
                    }
                    attempt += 1;
                    let delay = self.retry.delay(attempt, rand::random::<f64>());
                    log::debug!("transient failure ({err}); retrying in {delay:?}");
                    self.clock.sleep(delay);
                }
                other => return (other, attempt),
            }
        }
    }

    fn record_failure(&self, kind: CallKind, request_digest: String, latency: Duration, attempts: u32) {
        self.ledger.record(BackendCall {
            kind,
            request_digest,
            response_digest: String::new(),
            latency,
            prompt_tokens: 0,
            completion_tokens: 0,
            attempt_count: attempts,
            ok: false,
        });
    }
}

fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    let last = messages
        .last()
        .ok_or_else(|| BackendError::InvalidRequest("no messages".into()))?;
    if last.role != Role::User {
        return Err(BackendError::InvalidRequest("last message must come from the user".into()));
    }
    if messages
        .iter()
        .any(|m| m.role != Role::Assistant && m.content.trim().is_empty())
    {
        return Err(BackendError::InvalidRequest("empty system or user message".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FaultInjectingChat, FnChat, FnEmbedder, HashedTokenEmbedder};
    use crate::backends::{ChatReply, FakeClock};
    use approx::assert_abs_diff_eq;

    fn quiet_retry(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(10),
            jitter: 0.0,
        }
    }

    fn echo() -> Arc<dyn ChatTransport> {
        Arc::new(FnChat::new(|m: &[ChatMessage]| Ok(format!("echo: {}  \n", m[m.len() - 1].content))))
    }

    fn params() -> CompletionParams {
        CompletionParams::new("test-model", 0.0)
    }

    #[test]
    fn two_transient_failures_then_success() {
        let clock = Arc::new(FakeClock::new());
        let chat = Arc::new(FaultInjectingChat::transient(echo(), 2));
        let backends = Backends::default()
            .with_chat(chat.clone())
            .with_retry(quiet_retry(3))
            .with_clock(clock.clone());
        let out = backends.complete(&[ChatMessage::user("hi")], &params()).unwrap();
        assert_eq!(out.text, "echo: hi");
        assert_eq!(out.call.attempt_count, 3);
        assert_eq!(backends.ledger().len(), 1);
        assert_eq!(chat.attempts(), 3);
        assert_eq!(
            clock.sleeps(),
            vec![Duration::from_millis(200), Duration::from_millis(400)]
        );
    }

    #[test]
    fn retries_are_bounded() {
        let clock = Arc::new(FakeClock::new());
        let chat = Arc::new(FaultInjectingChat::transient(echo(), 10));
        let backends = Backends::default()
            .with_chat(chat.clone())
            .with_retry(quiet_retry(2))
            .with_clock(clock);
        let err = backends.complete(&[ChatMessage::user("hi")], &params()).unwrap_err();
        assert!(matches!(err, BackendError::RetriesExhausted { attempts: 3, .. }), "{err:?}");
        assert_eq!(chat.attempts(), 3);
        let calls = backends.ledger().calls();
        assert_eq!(calls.len(), 1);
        assert!(!calls[0].ok);
    }

    #[test]
    fn permanent_error_is_not_retried() {
        let chat = Arc::new(FaultInjectingChat::new(
            echo(),
            vec![BackendError::from_status(401, "bad key")],
        ));
        let backends = Backends::default()
            .with_chat(chat.clone())
            .with_clock(Arc::new(FakeClock::new()));
        let err = backends.complete(&[ChatMessage::user("hi")], &params()).unwrap_err();
        assert!(matches!(err, BackendError::Authentication(_)));
        assert_eq!(chat.attempts(), 1);
        assert_eq!(backends.ledger().calls()[0].attempt_count, 1);
    }

    #[test]
    fn request_validation() {
        let backends = Backends::default().with_chat(echo());
        assert!(backends.complete(&[], &params()).is_err());
        assert!(backends
            .complete(&[ChatMessage::user("q"), ChatMessage::assistant("a")], &params())
            .is_err());
        assert!(backends
            .complete(&[ChatMessage::system(" "), ChatMessage::user("q")], &params())
            .is_err());
        let hot = CompletionParams::new("m", 2.5);
        assert!(backends.complete(&[ChatMessage::user("q")], &hot).is_err());
        assert!(backends.ledger().is_empty());
    }

    #[test]
    fn embed_normalizes_and_checks_dimension() {
        let embed = Arc::new(FnEmbedder::new(|t: &str| {
            Ok(if t == "wide" { vec![1.0, 1.0, 1.0] } else { vec![3.0, 4.0] })
        }));
        let backends = Backends::default().with_embed(embed);
        let v = backends.embed("anything").unwrap();
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!(matches!(
            backends.embed("wide"),
            Err(BackendError::DimensionMismatch { expected: 2, found: 3 })
        ));
        assert!(backends.embed("   ").is_err());
    }

    #[test]
    fn hashed_embedder_is_deterministic_unit_norm() {
        let backends = Backends::default().with_embed(Arc::new(HashedTokenEmbedder::default()));
        let a = backends.embed("Where is the nearest ATM?").unwrap();
        let b = backends.embed("Where is the nearest ATM?").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 256);
        assert!((a.norm() - 1.0).abs() <= 1e-6);
        assert_eq!(backends.ledger().count(CallKind::Embed), 2);
    }

    #[test]
    fn concurrent_calls_each_get_one_ledger_entry() {
        let backends = Arc::new(
            Backends::default()
                .with_chat(Arc::new(FnChat::new(|m: &[ChatMessage]| Ok(m[0].content.clone()))))
                .with_max_in_flight(2),
        );
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let b = backends.clone();
                std::thread::spawn(move || {
                    let out = b.complete(&[ChatMessage::user(format!("q{i}"))], &params()).unwrap();
                    assert_eq!(out.text, format!("q{i}"));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(backends.ledger().len(), 16);
    }

    #[test]
    fn token_counts_reach_the_ledger() {
        struct Counted;
        impl ChatTransport for Counted {
            fn send(&self, _: &[ChatMessage], _: &CompletionParams) -> Result<ChatReply, BackendError> {
                Ok(ChatReply { text: "ok".into(), prompt_tokens: 12, completion_tokens: 3 })
            }
        }
        let backends = Backends::default().with_chat(Arc::new(Counted));
        backends.complete(&[ChatMessage::user("q")], &params()).unwrap();
        let s = backends.ledger().summary();
        assert_eq!((s.chat_calls, s.prompt_tokens, s.completion_tokens), (1, 12, 3));
    }
}
