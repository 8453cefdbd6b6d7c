//! Chat-completion endpoints: the transport trait, deterministic test
//! doubles, and cassette record/replay.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stereoprobe_core::corpus::{EvalItem, Label};
use stereoprobe_core::embedder::stable_hash;

/// One chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

/// A logical chat-completion request. Provider-specific fields (model id,
/// auth) are added by the transport at wire time, so the same request can be
/// served live, scripted, or from a cassette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    /// The text the endpoint is being asked to complete: the latest user
    /// message, or empty when there is none.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Assistant text from a completed chat request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("no recorded response left for request {key}")]
    CassetteMiss { key: String },
    #[error("cassette file: {0}")]
    CassetteFile(String),
}

/// A chat-completion backend. Implementations must tolerate concurrent
/// calls; the caller enforces the in-flight limit.
pub trait ChatEndpoint: Send + Sync {
    /// Stable identity for logs and journals.
    fn id(&self) -> String;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError>;
}

/// A scripted reply sequence, matched against the request prompt.
#[derive(Debug, Clone)]
pub struct ScriptedRule {
    /// Applies when the prompt contains this substring; an empty string
    /// matches every request.
    pub match_substring: String,
    /// Replies served in order; the last reply repeats once exhausted.
    pub replies: Vec<String>,
}

/// Deterministic in-memory endpoint serving scripted reply sequences; the
/// first matching rule wins. Useful for retry and exhaustion tests where
/// the n-th response to a prompt must be controlled exactly.
pub struct ScriptedEndpoint {
    rules: Vec<ScriptedRule>,
    served: Mutex<Vec<usize>>,
    requests: AtomicUsize,
}

impl ScriptedEndpoint {
    pub fn new(rules: Vec<ScriptedRule>) -> ScriptedEndpoint {
        let served = Mutex::new(vec![0; rules.len()]);
        ScriptedEndpoint {
            rules,
            served,
            requests: AtomicUsize::new(0),
        }
    }

    /// One rule matching every prompt with a single repeating reply.
    pub fn always(reply: impl Into<String>) -> ScriptedEndpoint {
        ScriptedEndpoint::sequence(vec![reply.into()])
    }

    /// One rule matching every prompt, serving `replies` in order (the last
    /// repeats).
    pub fn sequence(replies: Vec<String>) -> ScriptedEndpoint {
        ScriptedEndpoint::new(vec![ScriptedRule {
            match_substring: String::new(),
            replies,
        }])
    }

    /// Total requests served so far, for retry-accounting assertions.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl ChatEndpoint for ScriptedEndpoint {
    fn id(&self) -> String {
        "scripted".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let prompt = request.prompt();
        let idx = self
            .rules
            .iter()
            .position(|r| prompt.contains(&r.match_substring))
            .ok_or_else(|| {
                EndpointError::BadResponse("no scripted rule matches the prompt".to_string())
            })?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let turn = {
            let mut served = self.served.lock().expect("serve counters lock");
            let turn = served[idx];
            served[idx] += 1;
            turn
        };
        let rule = &self.rules[idx];
        let reply = rule
            .replies
            .get(turn)
            .or_else(|| rule.replies.last())
            .ok_or_else(|| EndpointError::BadResponse("scripted rule has no replies".to_string()))?;
        Ok(ChatResponse {
            content: reply.clone(),
        })
    }
}

/// Simulates a model with a fixed stereotype propensity.
///
/// For a prompt built from a known item, the reply is the well-formed JSON
/// completion holding the item's stereotype sentence with probability `q`
/// and the anti-stereotype sentence otherwise. The draw is made once per
/// item — keyed by the seed and the item id, independent of request order —
/// so every query for an item gets the same reply and a majority vote over
/// the queries preserves `q` exactly.
pub struct PropensityEndpoint {
    items: Vec<EvalItem>,
    q: f64,
    seed: u64,
}

impl PropensityEndpoint {
    pub fn new(items: Vec<EvalItem>, q: f64, seed: u64) -> PropensityEndpoint {
        assert!((0.0..=1.0).contains(&q), "propensity out of range: {q}");
        PropensityEndpoint { items, q, seed }
    }

    /// The label this endpoint emits for `item`, without issuing a request.
    pub fn drawn_label(&self, item: &EvalItem) -> Label {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(item.item_id.as_bytes()));
        if rng.gen::<f64>() < self.q {
            Label::Stereotype
        } else {
            Label::AntiStereotype
        }
    }
}

impl ChatEndpoint for PropensityEndpoint {
    fn id(&self) -> String {
        format!("propensity-q{}", self.q)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let prompt = request.prompt();
        // Longest match wins, in case one masked sentence contains another.
        let item = self
            .items
            .iter()
            .filter(|i| prompt.contains(&i.masked_sentence))
            .max_by_key(|i| i.masked_sentence.len())
            .ok_or_else(|| {
                EndpointError::BadResponse("prompt matches no known item".to_string())
            })?;
        let sentence = match self.drawn_label(item) {
            Label::Stereotype => &item.stereotype_sentence,
            Label::AntiStereotype => &item.anti_stereotype_sentence,
        };
        let content = serde_json::json!({ "predicted_sentence": sentence }).to_string();
        Ok(ChatResponse { content })
    }
}

/// Content hash identifying a request in a cassette.
pub fn request_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_string(request).expect("request serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Recorded request → response traffic, serializable to JSON.
///
/// Responses for one request key are kept in arrival order and replayed
/// first-in-first-out. The protocol sends identical bytes for every query
/// and retry of an item, so a key's queue is exactly that item's response
/// stream; replay reproduces it bit for bit as long as an item's requests
/// stay sequential (the protocol parallelizes across items only).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Cassette, EndpointError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| EndpointError::CassetteFile(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| EndpointError::CassetteFile(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), EndpointError> {
        let raw = serde_json::to_string_pretty(self).expect("cassette serializes");
        std::fs::write(path, raw)
            .map_err(|e| EndpointError::CassetteFile(format!("{}: {e}", path.display())))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Records traffic passing through an inner endpoint into a [`Cassette`].
pub struct RecordingEndpoint<E> {
    inner: E,
    cassette: Mutex<Cassette>,
}

impl<E: ChatEndpoint> RecordingEndpoint<E> {
    pub fn new(inner: E) -> RecordingEndpoint<E> {
        RecordingEndpoint {
            inner,
            cassette: Mutex::new(Cassette::default()),
        }
    }

    /// Snapshot of everything recorded so far.
    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }
}

impl<E: ChatEndpoint> ChatEndpoint for RecordingEndpoint<E> {
    fn id(&self) -> String {
        format!("record({})", self.inner.id())
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let response = self.inner.complete(request)?;
        self.cassette
            .lock()
            .expect("cassette lock")
            .entries
            .entry(request_key(request))
            .or_default()
            .push(response.content.clone());
        Ok(response)
    }
}

/// Replays a [`Cassette`] with no live backend; an exhausted or unknown
/// request key fails with [`EndpointError::CassetteMiss`].
pub struct ReplayEndpoint {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayEndpoint {
    pub fn new(cassette: Cassette) -> ReplayEndpoint {
        let queues = cassette
            .entries
            .into_iter()
            .map(|(key, responses)| (key, VecDeque::from(responses)))
            .collect();
        ReplayEndpoint {
            queues: Mutex::new(queues),
        }
    }
}

impl ChatEndpoint for ReplayEndpoint {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let key = request_key(request);
        let mut queues = self.queues.lock().expect("replay lock");
        let content = queues
            .get_mut(&key)
            .and_then(|queue| queue.pop_front())
            .ok_or(EndpointError::CassetteMiss { key })?;
        Ok(ChatResponse { content })
    }
}
