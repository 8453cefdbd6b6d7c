//! Gateway between the evaluation pipeline and served chat models.
//!
//! The flow: [`prompt`] renders the masked-sentence task for an item,
//! [`endpoint`] transports it to a backend (live HTTP, scripted double, or
//! cassette replay), [`parse`] extracts the predicted sentence from the raw
//! completion, and [`protocol`] drives the query/retry/exhaustion protocol
//! that downstream scoring consumes.

pub mod endpoint;
pub mod http;
pub mod parse;
pub mod prompt;
pub mod protocol;

pub use endpoint::{
    Cassette, ChatEndpoint, ChatMessage, ChatRequest, ChatResponse, EndpointError,
    PropensityEndpoint, RecordingEndpoint, ReplayEndpoint, ScriptedEndpoint, ScriptedRule,
};
pub use http::{HttpEndpoint, ModelEndpoint, RemoteEncoder};
pub use parse::{parse_completion, ParseFailure, ParseStrictness};
pub use prompt::{render_prompt, PROMPT_TEMPLATE};
pub use protocol::{
    predicted_sentences, unmask, CompletionRecord, GatewayError, GenerationConfig, QueryStatus,
    TrafficJournal, UnmaskSession,
};
