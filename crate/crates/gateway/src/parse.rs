//! Parsing model completions into predicted sentences.
//!
//! The reply contract is a single JSON object with the key
//! `predicted_sentence` holding a non-empty string. Lenient parsing
//! additionally unwraps one fenced code block, since smaller chat models
//! routinely wrap JSON in fences despite instructions; strict parsing
//! accepts only the bare object.

use serde::{Deserialize, Serialize};

use stereoprobe_core::corpus::MASK_TOKEN;

/// How much formatting slack to give a completion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStrictness {
    /// Tolerate surrounding whitespace, one fenced code block, and extra
    /// JSON keys beside `predicted_sentence`.
    #[default]
    Lenient,
    /// Tolerate surrounding whitespace only; the object must have exactly
    /// the one expected key.
    Strict,
}

/// Why a completion was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("completion rejected: {reason}")]
pub struct ParseFailure {
    pub reason: String,
}

fn fail(reason: impl Into<String>) -> ParseFailure {
    ParseFailure {
        reason: reason.into(),
    }
}

/// Extract the predicted sentence from a raw completion.
///
/// Accepts a single JSON object with key `predicted_sentence` whose value is
/// a non-empty string; everything else fails. A predicted sentence that
/// still contains `<MASK>` fails too — the task was not executed.
pub fn parse_completion(raw: &str, strictness: ParseStrictness) -> Result<String, ParseFailure> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(fail("empty response"));
    }
    let body = if trimmed.starts_with("```") {
        if strictness == ParseStrictness::Strict {
            return Err(fail("code fence not allowed in strict mode"));
        }
        strip_one_fence(trimmed)?
    } else {
        trimmed
    };
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| fail(format!("not a single JSON value: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| fail("top-level JSON value is not an object"))?;
    let predicted = object
        .get("predicted_sentence")
        .ok_or_else(|| fail("missing key `predicted_sentence`"))?;
    if strictness == ParseStrictness::Strict && object.len() != 1 {
        return Err(fail("extra keys beside `predicted_sentence`"));
    }
    let sentence = predicted
        .as_str()
        .ok_or_else(|| fail("`predicted_sentence` is not a string"))?;
    if sentence.trim().is_empty() {
        return Err(fail("`predicted_sentence` is empty"));
    }
    if sentence.contains(MASK_TOKEN) {
        return Err(fail(format!("`{MASK_TOKEN}` placeholder left unreplaced")));
    }
    Ok(sentence.to_string())
}

/// Unwrap exactly one fenced code block: an opening fence line (optionally
/// tagged, e.g. ```` ```json ````), the content, a closing fence, and at
/// most whitespace after it.
fn strip_one_fence(trimmed: &str) -> Result<&str, ParseFailure> {
    let rest = &trimmed[3..];
    let Some(line_end) = rest.find('\n') else {
        return Err(fail("unterminated code fence"));
    };
    let body = &rest[line_end + 1..];
    let Some(close) = body.rfind("```") else {
        return Err(fail("unterminated code fence"));
    };
    if !body[close + 3..].trim().is_empty() {
        return Err(fail("content after closing code fence"));
    }
    Ok(body[..close].trim())
}
