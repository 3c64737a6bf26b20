//! Commit-message codec for conversation context.
//!
//! Layout (each line terminated by `\n`):
//!
//! ```text
//! choir: update <path>
//!
//! <one-line change title>
//!
//! Choir-Proposal-Id: <uuid>
//! Choir-Requester: <id>
//! Choir-Approver: <id>
//! Choir-Context: <base64 of canonical JSON {messages, summary}>
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use super::{ConversationContext, SourceMessage};

pub const PROPOSAL_ID_KEY: &str = "Choir-Proposal-Id";
pub const REQUESTER_KEY: &str = "Choir-Requester";
pub const APPROVER_KEY: &str = "Choir-Approver";
pub const CONTEXT_KEY: &str = "Choir-Context";

const TRAILER_PREFIX: &str = "Choir-";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed trailer {key}: {reason}")]
    MalformedTrailer { key: String, reason: String },
    #[error("value for {field} cannot be stored in a trailer: {reason}")]
    InvalidValue { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitKind {
    Update,
    Create,
}

impl CommitKind {
    fn verb(self) -> &'static str {
        match self {
            CommitKind::Update => "update",
            CommitKind::Create => "create",
        }
    }
}

#[derive(Serialize)]
struct PayloadOut<'a> {
    messages: &'a [SourceMessage],
    summary: &'a Option<String>,
}

#[derive(Deserialize)]
struct PayloadIn {
    messages: Vec<SourceMessage>,
    summary: Option<String>,
}

fn check_single_line(field: &'static str, value: &str) -> Result<(), CodecError> {
    if value.is_empty() {
        return Err(CodecError::InvalidValue {
            field,
            reason: "empty".into(),
        });
    }
    if value.contains(['\n', '\r']) {
        return Err(CodecError::InvalidValue {
            field,
            reason: "contains a line break".into(),
        });
    }
    Ok(())
}

/// Canonical JSON for the context payload: keys in declaration order, no
/// insignificant whitespace.
pub fn canonical_payload(context: &ConversationContext) -> String {
    let payload = PayloadOut {
        messages: &context.messages,
        summary: &context.summary,
    };
    serde_json::to_string(&payload).expect("payload serialization is infallible")
}

/// Encodes the trailer block (four lines, each newline-terminated).
pub fn encode_context(context: &ConversationContext) -> Result<String, CodecError> {
    check_single_line("requester_id", &context.requester_id)?;
    check_single_line("approver_id", &context.approver_id)?;
    let payload = STANDARD.encode(canonical_payload(context));
    Ok(format!(
        "{PROPOSAL_ID_KEY}: {}\n{REQUESTER_KEY}: {}\n{APPROVER_KEY}: {}\n{CONTEXT_KEY}: {payload}\n",
        context.proposal_id, context.requester_id, context.approver_id
    ))
}

/// Collapses a free-form title to a single line.
pub fn one_line_title(title: &str) -> String {
    let joined = title.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined.is_empty() {
        "Update document".to_string()
    } else {
        joined
    }
}

/// Builds the full commit message for an applied proposal.
pub fn commit_message(
    kind: CommitKind,
    path: &str,
    title: &str,
    context: &ConversationContext,
) -> Result<String, CodecError> {
    check_single_line("path", path)?;
    let trailers = encode_context(context)?;
    Ok(format!(
        "choir: {} {path}\n\n{}\n\n{trailers}",
        kind.verb(),
        one_line_title(title)
    ))
}

fn malformed(key: &str, reason: impl Into<String>) -> CodecError {
    CodecError::MalformedTrailer {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Decodes the context from a commit message.
///
/// Returns `Ok(None)` when the final paragraph carries no `Choir-*` trailer
/// (foreign or manual commits). Returns `MalformedTrailer` when the trailers
/// are present but incomplete or undecodable.
pub fn decode_context(message: &str) -> Result<Option<ConversationContext>, CodecError> {
    let body = message.trim_end_matches(['\n', '\r']);
    let block = match body.rfind("\n\n") {
        Some(idx) => &body[idx + 2..],
        None => body,
    };

    let mut proposal_id = None;
    let mut requester = None;
    let mut approver = None;
    let mut context = None;
    let mut saw_choir_key = false;

    for line in block.split('\n') {
        let Some((key, value)) = line.split_once(": ") else {
            continue;
        };
        if !key.starts_with(TRAILER_PREFIX) {
            continue;
        }
        saw_choir_key = true;
        let slot = match key {
            PROPOSAL_ID_KEY => &mut proposal_id,
            REQUESTER_KEY => &mut requester,
            APPROVER_KEY => &mut approver,
            CONTEXT_KEY => &mut context,
            _ => continue,
        };
        if slot.is_some() {
            return Err(malformed(key, "duplicate trailer"));
        }
        *slot = Some(value);
    }

    if !saw_choir_key {
        return Ok(None);
    }

    let proposal_id = proposal_id.ok_or_else(|| malformed(PROPOSAL_ID_KEY, "missing"))?;
    let requester = requester.ok_or_else(|| malformed(REQUESTER_KEY, "missing"))?;
    let approver = approver.ok_or_else(|| malformed(APPROVER_KEY, "missing"))?;
    let context = context.ok_or_else(|| malformed(CONTEXT_KEY, "missing"))?;

    let proposal_id = Uuid::parse_str(proposal_id)
        .map_err(|e| malformed(PROPOSAL_ID_KEY, e.to_string()))?;
    let raw = STANDARD
        .decode(context)
        .map_err(|e| malformed(CONTEXT_KEY, format!("base64: {e}")))?;
    let json = String::from_utf8(raw).map_err(|e| malformed(CONTEXT_KEY, format!("utf-8: {e}")))?;
    let payload: PayloadIn =
        serde_json::from_str(&json).map_err(|e| malformed(CONTEXT_KEY, format!("json: {e}")))?;

    Ok(Some(ConversationContext {
        proposal_id,
        requester_id: requester.to_string(),
        approver_id: approver.to_string(),
        messages: payload.messages,
        summary: payload.summary,
    }))
}
