//! Language-model tasks behind one provider interface.
//!
//! [`Assistant`] validates what providers return; [`scripted`] is the
//! deterministic provider used by tests and [`remote`] posts task payloads
//! to an HTTP endpoint.

pub mod diff;
pub mod prompts;
pub mod remote;
pub mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use uuid::Uuid;

pub use diff::{diff_documents, DiffOp, EditDiff, Hunk};
pub use remote::RemoteProvider;
pub use scripted::{EditRule, ScriptedProvider};

use crate::index::Chunk;
use crate::repo::{DocumentFile, Revision, RevisionRecord, SourceMessage};
use crate::text::normalize_content;

pub const NO_CONTEXT_SUMMARY: &str = "No prior revision context.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssistantError {
    #[error("assistant provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("assistant returned degenerate output: {0}")]
    DegenerateOutput(String),
    #[error("invalid assistant input: {0}")]
    InvalidInput(String),
    #[error("contents are identical after normalization")]
    EmptyEdit,
}

/// Document a proposal edits: an existing path, or a new one to create.
///
/// Serialized as the bare path, or `new:<path>` for creation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DocTarget {
    Existing(String),
    New(String),
}

impl DocTarget {
    pub fn path(&self) -> &str {
        match self {
            DocTarget::Existing(p) | DocTarget::New(p) => p,
        }
    }

    pub fn is_new(&self) -> bool {
        matches!(self, DocTarget::New(_))
    }
}

impl fmt::Display for DocTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DocTarget::Existing(p) => f.write_str(p),
            DocTarget::New(p) => write!(f, "new:{p}"),
        }
    }
}

impl Serialize for DocTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DocTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(match raw.strip_prefix("new:") {
            Some(p) => DocTarget::New(p.to_string()),
            None => DocTarget::Existing(raw),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalState {
    Offered,
    Superseded,
    InDiscussion,
    Applied,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProposal {
    pub proposal_id: Uuid,
    pub doc_path: DocTarget,
    pub base_revision: Option<Revision>,
    pub base_content: String,
    pub proposed_content: String,
    pub change_title: String,
    pub source_messages: Vec<SourceMessage>,
    pub candidate_rank: usize,
    pub state: ProposalState,
}

impl EditProposal {
    pub fn diff(&self) -> EditDiff {
        diff_documents(&self.base_content, &self.proposed_content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub cited_chunks: Vec<String>,
    /// No grounding was available; the text says so.
    pub no_source: bool,
}

/// Task-tagged request handed to a provider. Its JSON form (tagged by
/// `task`) is the body of remote provider calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ProviderRequest {
    ProposeEdit {
        document: DocumentFile,
        messages: Vec<SourceMessage>,
    },
    AnswerQuestion {
        question: String,
        chunks: Vec<Chunk>,
    },
    SummarizeContext {
        records: Vec<RevisionRecord>,
    },
    SummarizeChange {
        base: String,
        proposed: String,
        diff: EditDiff,
    },
}

impl ProviderRequest {
    pub fn task_name(&self) -> &'static str {
        match self {
            ProviderRequest::ProposeEdit { .. } => "propose_edit",
            ProviderRequest::AnswerQuestion { .. } => "answer_question",
            ProviderRequest::SummarizeContext { .. } => "summarize_context",
            ProviderRequest::SummarizeChange { .. } => "summarize_change",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cited_chunks: Option<Vec<String>>,
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, AssistantError>;
}

#[derive(Clone)]
pub struct Assistant {
    provider: Arc<dyn Provider>,
}

impl fmt::Debug for Assistant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Assistant").finish_non_exhaustive()
    }
}

fn default_title(document: &DocumentFile, messages: &[SourceMessage]) -> String {
    let verb = if document.revision.is_none() && document.content.is_empty() {
        "Create"
    } else {
        "Update"
    };
    let from = messages.len();
    format!(
        "{verb} {} from {from} chat message{}",
        document.path,
        if from == 1 { "" } else { "s" }
    )
}

impl Assistant {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self { provider }
    }

    pub fn scripted() -> Self {
        Self::new(Arc::new(ScriptedProvider::default()))
    }

    /// Full replacement content and a one-line title for `document`.
    pub fn propose_edit(
        &self,
        document: &DocumentFile,
        messages: &[SourceMessage],
    ) -> Result<(String, String), AssistantError> {
        if messages.is_empty() {
            return Err(AssistantError::InvalidInput("no messages selected".into()));
        }
        let response = self.provider.complete(&ProviderRequest::ProposeEdit {
            document: document.clone(),
            messages: messages.to_vec(),
        })?;
        let content = normalize_content(&response.text);
        if content.is_empty() {
            return Err(AssistantError::DegenerateOutput("empty document".into()));
        }
        if content == normalize_content(&document.content) {
            return Err(AssistantError::DegenerateOutput("document unchanged".into()));
        }
        let title = response
            .title
            .map(|t| crate::repo::codec::one_line_title(&t))
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| default_title(document, messages));
        Ok((content, title))
    }

    pub fn answer_question(&self, question: &str, grounding: &[Chunk]) -> Result<Answer, AssistantError> {
        let response = self.provider.complete(&ProviderRequest::AnswerQuestion {
            question: question.to_string(),
            chunks: grounding.to_vec(),
        })?;
        if grounding.is_empty() {
            return Ok(Answer {
                text: response.text,
                cited_chunks: Vec::new(),
                no_source: true,
            });
        }
        let cited = match response.cited_chunks {
            Some(ids) => {
                let mut kept: Vec<String> = Vec::new();
                for id in ids {
                    if grounding.iter().any(|c| c.chunk_id == id) && !kept.contains(&id) {
                        kept.push(id);
                    }
                }
                kept
            }
            None => grounding.iter().map(|c| c.chunk_id.clone()).collect(),
        };
        Ok(Answer {
            text: response.text,
            cited_chunks: cited,
            no_source: false,
        })
    }

    pub fn summarize_context(&self, records: &[RevisionRecord]) -> Result<String, AssistantError> {
        if records.iter().all(|r| r.context.is_none()) {
            return Ok(NO_CONTEXT_SUMMARY.to_string());
        }
        let response = self.provider.complete(&ProviderRequest::SummarizeContext {
            records: records.to_vec(),
        })?;
        if response.text.trim().is_empty() {
            return Err(AssistantError::DegenerateOutput("empty context summary".into()));
        }
        Ok(response.text)
    }

    pub fn summarize_change(&self, base: &str, proposed: &str) -> Result<String, AssistantError> {
        let base = normalize_content(base);
        let proposed = normalize_content(proposed);
        if base == proposed {
            return Err(AssistantError::EmptyEdit);
        }
        let diff = diff_documents(&base, &proposed);
        let response = self.provider.complete(&ProviderRequest::SummarizeChange {
            base,
            proposed,
            diff,
        })?;
        if response.text.trim().is_empty() {
            return Err(AssistantError::DegenerateOutput("empty change summary".into()));
        }
        Ok(response.text)
    }

    pub fn diff_documents(&self, base: &str, proposed: &str) -> EditDiff {
        diff_documents(base, proposed)
    }
}
