//! The query/retry protocol: each item is asked `n_queries_per_item` times,
//! each query retries on parse failure up to `max_retries_per_query`, and a
//! query that exhausts its retries is recorded as such — the item's verdict
//! later falls to the majority of the parsed queries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use stereoprobe_core::corpus::EvalItem;

use crate::endpoint::{ChatEndpoint, ChatMessage, ChatRequest, EndpointError};
use crate::parse::{parse_completion, ParseStrictness};
use crate::prompt::render_prompt;

/// Decoding and protocol settings for the unmasking task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub top_p: f64,
    pub temperature: f64,
    /// Queries per item; odd, so the majority is decisive.
    pub n_queries_per_item: usize,
    pub max_retries_per_query: usize,
    #[serde(default)]
    pub strictness: ParseStrictness,
}

impl Default for GenerationConfig {
    fn default() -> GenerationConfig {
        GenerationConfig {
            top_p: 0.9,
            temperature: 0.8,
            n_queries_per_item: 5,
            max_retries_per_query: 5,
            strictness: ParseStrictness::Lenient,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |reason: &str| Err(GatewayError::InvalidConfig(reason.to_string()));
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.n_queries_per_item == 0 || self.n_queries_per_item % 2 == 0 {
            return bad("n_queries_per_item must be odd so the majority is decisive");
        }
        if self.max_retries_per_query == 0 {
            return bad("max_retries_per_query must be at least 1");
        }
        Ok(())
    }
}

/// Final outcome of one query for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Parsed,
    RetryExhausted,
}

/// One query's record: the raw text that settled it and what was extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub item_id: String,
    /// 1-based attempt that produced `raw_response`; `max_retries_per_query`
    /// for exhausted queries.
    pub attempt_index: usize,
    pub raw_response: String,
    /// Present iff `status` is [`QueryStatus::Parsed`].
    pub predicted_sentence: Option<String>,
    pub status: QueryStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("journal: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Append-only JSONL log of every request/response exchange.
pub struct TrafficJournal {
    sink: Mutex<BufWriter<File>>,
}

#[derive(Serialize)]
struct JournalLine<'a> {
    endpoint: &'a str,
    item_id: &'a str,
    /// 1-based query index within the item.
    query_index: usize,
    /// 1-based attempt index within the query.
    attempt_index: usize,
    prompt: &'a str,
    response: Option<&'a str>,
    error: Option<&'a str>,
}

impl TrafficJournal {
    pub fn create(path: &Path) -> std::io::Result<TrafficJournal> {
        Ok(TrafficJournal {
            sink: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }

    fn log(&self, line: &JournalLine<'_>) {
        let mut sink = self.sink.lock().expect("journal lock");
        let serialized = serde_json::to_string(line).expect("journal line serializes");
        // A failed audit write must not corrupt the evaluation itself.
        if let Err(e) = writeln!(sink, "{serialized}") {
            log::warn!("journal write failed: {e}");
        }
        let _ = sink.flush();
    }
}

/// One evaluation pass against a single endpoint: carries the protocol
/// settings and an optional traffic journal.
pub struct UnmaskSession<'a> {
    endpoint: &'a dyn ChatEndpoint,
    config: GenerationConfig,
    journal: Option<TrafficJournal>,
}

impl<'a> UnmaskSession<'a> {
    pub fn new(
        endpoint: &'a dyn ChatEndpoint,
        config: GenerationConfig,
    ) -> Result<UnmaskSession<'a>, GatewayError> {
        config.validate()?;
        Ok(UnmaskSession {
            endpoint,
            config,
            journal: None,
        })
    }

    /// Journal every exchange to a JSONL file at `path`.
    pub fn with_journal(mut self, path: &Path) -> Result<UnmaskSession<'a>, GatewayError> {
        self.journal = Some(TrafficJournal::create(path)?);
        Ok(self)
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    /// Run the full protocol for one item: `n_queries_per_item` records,
    /// each settled within `max_retries_per_query` attempts.
    ///
    /// Parse failures are retried; transport failures are retried too, but a
    /// query that never receives any response gives up with the transport
    /// error, and an authentication failure aborts immediately (a retry
    /// cannot fix credentials).
    pub fn unmask(&self, item: &EvalItem) -> Result<Vec<CompletionRecord>, GatewayError> {
        let prompt = render_prompt(item);
        let request = ChatRequest {
            messages: vec![ChatMessage::user(prompt.clone())],
            temperature: self.config.temperature,
            top_p: self.config.top_p,
        };
        (1..=self.config.n_queries_per_item)
            .map(|query_index| self.run_query(item, &prompt, &request, query_index))
            .collect()
    }

    fn run_query(
        &self,
        item: &EvalItem,
        prompt: &str,
        request: &ChatRequest,
        query_index: usize,
    ) -> Result<CompletionRecord, GatewayError> {
        let endpoint_id = self.endpoint.id();
        let mut last_response: Option<String> = None;
        for attempt in 1..=self.config.max_retries_per_query {
            match self.endpoint.complete(request) {
                Ok(response) => {
                    if let Some(journal) = &self.journal {
                        journal.log(&JournalLine {
                            endpoint: &endpoint_id,
                            item_id: &item.item_id,
                            query_index,
                            attempt_index: attempt,
                            prompt,
                            response: Some(&response.content),
                            error: None,
                        });
                    }
                    match parse_completion(&response.content, self.config.strictness) {
                        Ok(sentence) => {
                            return Ok(CompletionRecord {
                                item_id: item.item_id.clone(),
                                attempt_index: attempt,
                                raw_response: response.content,
                                predicted_sentence: Some(sentence),
                                status: QueryStatus::Parsed,
                            });
                        }
                        Err(failure) => {
                            log::debug!(
                                "item {} query {query_index} attempt {attempt}: {failure}",
                                item.item_id
                            );
                            last_response = Some(response.content);
                        }
                    }
                }
                Err(err) => {
                    if let Some(journal) = &self.journal {
                        journal.log(&JournalLine {
                            endpoint: &endpoint_id,
                            item_id: &item.item_id,
                            query_index,
                            attempt_index: attempt,
                            prompt,
                            response: None,
                            error: Some(&err.to_string()),
                        });
                    }
                    if matches!(err, EndpointError::AuthFailure(_)) {
                        return Err(err.into());
                    }
                    log::warn!(
                        "item {} query {query_index} attempt {attempt}: {err}",
                        item.item_id
                    );
                    if attempt == self.config.max_retries_per_query && last_response.is_none() {
                        return Err(err.into());
                    }
                }
            }
        }
        Ok(CompletionRecord {
            item_id: item.item_id.clone(),
            attempt_index: self.config.max_retries_per_query,
            raw_response: last_response
                .expect("exhausted query saw at least one response"),
            predicted_sentence: None,
            status: QueryStatus::RetryExhausted,
        })
    }

    /// Run the protocol for many items with at most `parallelism` items in
    /// flight. An item's queries stay sequential on one worker, so cassette
    /// replays are deterministic; output order matches input order.
    pub fn unmask_all(
        &self,
        items: &[EvalItem],
        parallelism: usize,
    ) -> Result<Vec<Vec<CompletionRecord>>, GatewayError> {
        if parallelism == 0 {
            return Err(GatewayError::InvalidConfig(
                "parallelism must be at least 1".to_string(),
            ));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| GatewayError::Pool(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            items.par_iter().map(|item| self.unmask(item)).collect()
        })
    }
}

/// One-shot helper: run the full protocol for a single item without
/// journaling.
pub fn unmask(
    endpoint: &dyn ChatEndpoint,
    item: &EvalItem,
    config: &GenerationConfig,
) -> Result<Vec<CompletionRecord>, GatewayError> {
    UnmaskSession::new(endpoint, *config)?.unmask(item)
}

/// The per-query predictions in the shape the verdict stage consumes:
/// `None` for exhausted queries.
pub fn predicted_sentences(records: &[CompletionRecord]) -> Vec<Option<String>> {
    records.iter().map(|r| r.predicted_sentence.clone()).collect()
}
