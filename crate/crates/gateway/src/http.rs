//! OpenAI-compatible HTTP transport: chat completions for evaluated models
//! and an embeddings route that serves pretrained sentence encoders behind
//! the uniform encoder interface.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use stereoprobe_core::embedder::{
    EmbedderError, EmbeddingVector, EncoderInfo, Pooling, SentenceEncoder,
};

use crate::endpoint::{ChatEndpoint, ChatMessage, ChatRequest, ChatResponse, EndpointError};

/// Environment variables that override endpoint settings.
pub const ENV_BASE_URL: &str = "STEREOPROBE_BASE_URL";
pub const ENV_MODEL_ID: &str = "STEREOPROBE_MODEL_ID";
pub const ENV_TOKEN_ENV: &str = "STEREOPROBE_TOKEN_ENV";
pub const ENV_TIMEOUT_SECS: &str = "STEREOPROBE_TIMEOUT_SECS";
pub const ENV_PARALLELISM: &str = "STEREOPROBE_PARALLELISM";

/// Connection settings for a served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    /// Service root, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token. The token
    /// value itself is read at connect time and never stored in config files
    /// or serialized output.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// Request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Maximum in-flight requests.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_parallelism() -> usize {
    4
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> ModelEndpoint {
        ModelEndpoint {
            base_url: base_url.into(),
            model_id: model_id.into(),
            auth_token_env: None,
            timeout_secs: default_timeout_secs(),
            parallelism: default_parallelism(),
        }
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if self.timeout_secs == 0 {
            return Err(EndpointError::BadResponse(
                "timeout must be positive".to_string(),
            ));
        }
        if self.parallelism == 0 {
            return Err(EndpointError::BadResponse(
                "parallelism must be at least 1".to_string(),
            ));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| EndpointError::BadResponse(format!("bad base url: {e}")))?;
        Ok(())
    }

    /// Read a JSON settings file.
    pub fn from_file(path: &Path) -> Result<ModelEndpoint, EndpointError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| EndpointError::BadResponse(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| EndpointError::BadResponse(format!("{}: {e}", path.display())))
    }

    /// Overlay `STEREOPROBE_*` environment variables onto these settings;
    /// set variables win over the current values.
    pub fn overlay_env(mut self) -> ModelEndpoint {
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL_ID) {
            self.model_id = v;
        }
        if let Ok(v) = std::env::var(ENV_TOKEN_ENV) {
            self.auth_token_env = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_TIMEOUT_SECS) {
            if let Ok(secs) = v.parse() {
                self.timeout_secs = secs;
            }
        }
        if let Ok(v) = std::env::var(ENV_PARALLELISM) {
            if let Ok(n) = v.parse() {
                self.parallelism = n;
            }
        }
        self
    }

    /// Settings from an optional config file, overlaid with environment
    /// variables, then validated.
    pub fn resolve(config: Option<&Path>) -> Result<ModelEndpoint, EndpointError> {
        let base = match config {
            Some(path) => ModelEndpoint::from_file(path)?,
            None => ModelEndpoint::new("http://localhost:8000/v1", "default"),
        };
        let resolved = base.overlay_env();
        resolved.validate()?;
        Ok(resolved)
    }

    fn route(&self, suffix: &str) -> String {
        format!("{}/{suffix}", self.base_url.trim_end_matches('/'))
    }

    fn resolve_token(&self) -> Option<String> {
        self.auth_token_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
    }

    fn build_client(&self) -> Result<reqwest::blocking::Client, String> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

fn classify_status(status: reqwest::StatusCode) -> Option<EndpointError> {
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        return Some(EndpointError::AuthFailure(format!("HTTP {status}")));
    }
    if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        // Transient service trouble: callers treat this as retriable.
        return Some(EndpointError::EndpointUnreachable(format!("HTTP {status}")));
    }
    if !status.is_success() {
        return Some(EndpointError::BadResponse(format!("HTTP {status}")));
    }
    None
}

/// Live chat-completions transport (`POST {base_url}/chat/completions`).
pub struct HttpEndpoint {
    settings: ModelEndpoint,
    token: Option<String>,
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpEndpoint {
    pub fn connect(settings: ModelEndpoint) -> Result<HttpEndpoint, EndpointError> {
        settings.validate()?;
        let token = settings.resolve_token();
        let client = settings
            .build_client()
            .map_err(EndpointError::EndpointUnreachable)?;
        let url = settings.route("chat/completions");
        Ok(HttpEndpoint {
            settings,
            token,
            client,
            url,
        })
    }

    pub fn settings(&self) -> &ModelEndpoint {
        &self.settings
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn id(&self) -> String {
        format!("{}@{}", self.settings.model_id, self.settings.base_url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let body = WireChatRequest {
            model: &self.settings.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
        };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = call
            .send()
            .map_err(|e| EndpointError::EndpointUnreachable(e.to_string()))?;
        if let Some(err) = classify_status(response.status()) {
            return Err(err);
        }
        let wire: WireChatResponse = response
            .json()
            .map_err(|e| EndpointError::BadResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| EndpointError::BadResponse("no choices in response".to_string()))?;
        Ok(ChatResponse {
            content: choice.message.content,
        })
    }
}

#[derive(Serialize)]
struct WireEmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

/// Sentence embeddings served over an OpenAI-compatible `/embeddings` route,
/// wrapping pretrained transformer encoders behind the uniform encoder
/// interface. Inference only: enabling training is rejected.
#[derive(Clone)]
pub struct RemoteEncoder {
    settings: ModelEndpoint,
    token: Option<String>,
    client: reqwest::blocking::Client,
    url: String,
    dimension: usize,
}

impl RemoteEncoder {
    /// Connect and probe the service with one request to learn the
    /// embedding width.
    pub fn connect(settings: ModelEndpoint) -> Result<RemoteEncoder, EmbedderError> {
        settings.validate().map_err(|e| {
            EmbedderError::BackendUnavailable(settings.model_id.clone(), e.to_string())
        })?;
        let token = settings.resolve_token();
        let client = settings.build_client().map_err(|e| {
            EmbedderError::BackendUnavailable(settings.model_id.clone(), e)
        })?;
        let url = settings.route("embeddings");
        let mut encoder = RemoteEncoder {
            settings,
            token,
            client,
            url,
            dimension: 0,
        };
        let probe = encoder.embed_raw(&["dimension probe"])?;
        encoder.dimension = probe[0].len();
        if encoder.dimension == 0 {
            return Err(EmbedderError::BackendUnavailable(
                encoder.settings.model_id.clone(),
                "service returned empty embeddings".to_string(),
            ));
        }
        Ok(encoder)
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedderError> {
        let unavailable = |reason: String| {
            EmbedderError::BackendUnavailable(self.settings.model_id.clone(), reason)
        };
        let body = WireEmbeddingRequest {
            model: &self.settings.model_id,
            input: texts,
        };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = call.send().map_err(|e| unavailable(e.to_string()))?;
        if let Some(err) = classify_status(response.status()) {
            return Err(unavailable(err.to_string()));
        }
        let wire: WireEmbeddingResponse =
            response.json().map_err(|e| unavailable(e.to_string()))?;
        if wire.data.len() != texts.len() {
            return Err(unavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                wire.data.len()
            )));
        }
        Ok(wire.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl SentenceEncoder for RemoteEncoder {
    fn info(&self) -> EncoderInfo {
        EncoderInfo {
            backend_id: self.settings.model_id.clone(),
            dimension: self.dimension,
            trainable: false,
            pooling: Pooling::Mean,
        }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedderError> {
        let rows = self.embed_raw(texts)?;
        rows.into_iter()
            .zip(texts)
            .map(|(mut values, text)| {
                if values.len() != self.dimension {
                    return Err(EmbedderError::DimensionMismatch {
                        left: self.dimension,
                        right: values.len(),
                    });
                }
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(EmbedderError::ZeroVector);
                }
                for v in &mut values {
                    *v /= norm;
                }
                Ok(EmbeddingVector::new(values, text))
            })
            .collect()
    }

    fn set_trainable(&mut self, flag: bool) -> Result<(), EmbedderError> {
        if flag {
            return Err(EmbedderError::UnsupportedForBackend(
                self.settings.model_id.clone(),
                "training",
            ));
        }
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn SentenceEncoder> {
        Box::new(self.clone())
    }
}
