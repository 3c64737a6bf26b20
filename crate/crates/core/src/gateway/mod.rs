//! Event ingestion, action sequencing and the journal that makes both
//! survive a restart.
//!
//! Events are handled one at a time. Each handled event appends one journal
//! line holding the event, its acknowledgement, full copies of the records
//! it touched and the actions it produced. Replaying the journal restores
//! the same state and action stream; identifiers are derived from event ids
//! so a replayed run and an uninterrupted one agree.

pub mod action;
pub mod config;
pub mod event;
pub mod journal;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub use action::{ActionKind, Block, Button, ChatAction, SequencedAction};
pub use config::{Config, ConfigError};
pub use event::{ChatEvent, EventKind, Payload};
pub use journal::{Journal, JournalError, JournalRecord, StateDelta};

use crate::assistant::EditProposal;
use crate::ids::IdGen;
use crate::index::KnowledgeIndex;
use crate::repo::{DocumentFile, RepoError, RepositoryHandle, Revision, RevisionRecord};
use crate::workflow::{
    Decision, Discussion, Effects, FlowInstance, Workflow, WorkflowError, WorkflowState,
};
use action::buttons;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub retryable: bool,
}

impl ErrorInfo {
    /// HTTP status used by the service for this error.
    pub fn http_status(&self) -> u16 {
        match self.code.as_str() {
            "Malformed" | "UnknownFlow" | "UnknownAction" => 400,
            "WrongWorkspace" | "NotAManager" | "NotAMember" | "NotFlowOwner" => 403,
            "IllegalTransition" | "WrongFlowKind" => 409,
            "ProviderUnavailable" | "RepositoryError" if self.retryable => 503,
            "Journal" => 500,
            _ => 422,
        }
    }
}

impl From<&WorkflowError> for ErrorInfo {
    fn from(e: &WorkflowError) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
            retryable: e.is_retryable(),
        }
    }
}

/// Response to an ingested event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub event_id: Uuid,
    /// The event id was already handled; nothing was done again.
    pub duplicate: bool,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// Actions produced by this event, as sequenced on the stream.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<SequencedAction>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("unknown flow {0}")]
    UnknownFlow(Uuid),
    #[error("event from workspace {got:?}, expected {expected:?}")]
    WrongWorkspace { expected: String, got: String },
    /// Transient failure; the event was not recorded and may be redelivered.
    #[error("{0}")]
    Transient(WorkflowError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

impl IngestError {
    pub fn info(&self) -> ErrorInfo {
        let (code, retryable) = match self {
            IngestError::Malformed(_) => ("Malformed", false),
            IngestError::UnknownFlow(_) => ("UnknownFlow", false),
            IngestError::WrongWorkspace { .. } => ("WrongWorkspace", false),
            IngestError::Transient(e) => (e.code(), true),
            IngestError::Journal(_) => ("Journal", true),
        };
        ErrorInfo {
            code: code.to_string(),
            message: self.to_string(),
            retryable,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentListing {
    pub head: Option<Revision>,
    pub documents: Vec<String>,
}

/// Counts describing a replayed journal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub records: usize,
    pub events: usize,
    pub sweeps: usize,
    pub flows: usize,
    pub actions: usize,
    pub last_seq: u64,
}

struct Inner {
    workflow: Workflow,
    journal: Option<Journal>,
    seen: HashMap<Uuid, Ack>,
    actions: Vec<SequencedAction>,
    next_seq: u64,
}

pub struct Service {
    inner: Mutex<Inner>,
    workspace_id: Option<String>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("workspace_id", &self.workspace_id)
            .finish_non_exhaustive()
    }
}

fn merge_delta(state: &mut WorkflowState, delta: &StateDelta) {
    for f in &delta.flows {
        state.flows.insert(f.flow_id, f.clone());
    }
    for p in &delta.proposals {
        state.proposals.insert(p.proposal_id, p.clone());
    }
    for d in &delta.discussions {
        state.discussions.insert(d.conversation_id.clone(), d.clone());
    }
}

fn apply_record(inner: &mut Inner, record: &JournalRecord) {
    merge_delta(inner.workflow.state_mut(), record.delta());
    for a in record.actions() {
        inner.next_seq = inner.next_seq.max(a.seq + 1);
        inner.actions.push(a.clone());
    }
    if let JournalRecord::Event { event, ack, .. } = record {
        inner.seen.insert(event.event_id, Ack { actions: Vec::new(), ..ack.clone() });
    }
}

fn fold_records(records: &[JournalRecord]) -> (ReplaySummary, WorkflowState) {
    let mut state = WorkflowState::default();
    let mut summary = ReplaySummary {
        records: records.len(),
        ..Default::default()
    };
    for r in records {
        match r {
            JournalRecord::Event { .. } => summary.events += 1,
            JournalRecord::Sweep { .. } => summary.sweeps += 1,
        }
        merge_delta(&mut state, r.delta());
        summary.actions += r.actions().len();
        if let Some(last) = r.actions().last() {
            summary.last_seq = summary.last_seq.max(last.seq);
        }
    }
    summary.flows = state.flows.len();
    (summary, state)
}

/// Counts what a journal would restore, without touching any workflow.
pub fn summarize_records(records: &[JournalRecord]) -> ReplaySummary {
    fold_records(records).0
}

/// Restores workflow state from journal records without opening the
/// journal for writing.
pub fn replay_records(workflow: &mut Workflow, records: &[JournalRecord]) -> ReplaySummary {
    let (summary, state) = fold_records(records);
    workflow.restore(state);
    summary
}

impl Service {
    /// Wraps `workflow`, replaying and then appending to `journal` if given.
    pub fn new(
        workflow: Workflow,
        journal: Option<&Path>,
        workspace_id: Option<String>,
    ) -> Result<Self, JournalError> {
        let mut inner = Inner {
            workflow,
            journal: None,
            seen: HashMap::new(),
            actions: Vec::new(),
            next_seq: 1,
        };
        if let Some(path) = journal {
            let (j, records) = Journal::open(path)?;
            for r in &records {
                apply_record(&mut inner, r);
            }
            if !records.is_empty() {
                tracing::info!(records = records.len(), "journal replayed");
            }
            inner.journal = Some(j);
        }
        Ok(Self {
            inner: Mutex::new(inner),
            workspace_id,
        })
    }

    /// Builds repository, index, assistant and workflow from `config`.
    pub fn from_config(config: &Config) -> Result<Self, ServiceError> {
        let repo = RepositoryHandle::open_or_init(&config.repo_root, config.repo_init)?;
        let index = Arc::new(KnowledgeIndex::new(config.build_embedder(), config.index_config()));
        if let Err(e) = index.rebuild(&repo) {
            // A remote embedder may come up later; queries retry the build.
            tracing::warn!(error = %e, "initial index build failed");
        }
        let assistant = config.build_assistant()?;
        let workflow = Workflow::new(config.workflow_config(), repo, index, assistant);
        Ok(Self::new(workflow, Some(&config.journal_path), config.workspace_id.clone())?)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn ingest_json(&self, body: &[u8]) -> Result<Ack, IngestError> {
        let event = ChatEvent::from_json(body).map_err(IngestError::Malformed)?;
        self.ingest_event(event)
    }

    pub fn ingest_event(&self, event: ChatEvent) -> Result<Ack, IngestError> {
        let payload = event.payload().map_err(IngestError::Malformed)?;
        if let Some(expected) = &self.workspace_id {
            if &event.workspace_id != expected {
                return Err(IngestError::WrongWorkspace {
                    expected: expected.clone(),
                    got: event.workspace_id.clone(),
                });
            }
        }
        let mut inner = self.lock();
        if let Some(previous) = inner.seen.get(&event.event_id) {
            return Ok(Ack {
                duplicate: true,
                actions: Vec::new(),
                ..previous.clone()
            });
        }
        if let Some(flow_id) = payload.flow_id() {
            if inner.workflow.flow(flow_id).is_none() {
                return Err(IngestError::UnknownFlow(flow_id));
            }
        }
        if let Payload::Button(b) = &payload {
            if !KNOWN_BUTTONS.contains(&b.action_id.as_str()) {
                return Err(IngestError::Malformed(format!("unknown action_id {:?}", b.action_id)));
            }
            if b.action_id == buttons::INVITE && b.invitee_id.as_deref().is_none_or(str::is_empty) {
                return Err(IngestError::Malformed("invite requires invitee_id".into()));
            }
        }

        let before = inner.workflow.state().clone();
        let mut fx = Effects::new(IdGen::for_event(&event.event_id), event.ts);
        let result = dispatch(&mut inner.workflow, &mut fx, &event, payload);
        let (ack, fx) = match result {
            Ok(flow_id) => (
                Ack {
                    event_id: event.event_id,
                    duplicate: false,
                    accepted: true,
                    flow_id,
                    error: None,
                    actions: Vec::new(),
                },
                fx,
            ),
            Err(e) => {
                inner.workflow.restore(before);
                if e.is_retryable() {
                    tracing::warn!(event_id = %event.event_id, error = %e, "transient failure");
                    return Err(IngestError::Transient(e));
                }
                let info = ErrorInfo::from(&e);
                let mut efx = Effects::new(IdGen::new(format!("{}:error", event.event_id)), event.ts);
                efx.actions.push(ChatAction {
                    action_id: efx.ids.next_uuid(),
                    kind: ActionKind::EphemeralMessage,
                    target: event.channel_id.clone(),
                    user_id: Some(event.user_id.clone()),
                    members: Vec::new(),
                    blocks: vec![Block::text(format!("CHOIR could not do that: {e}"))],
                });
                (
                    Ack {
                        event_id: event.event_id,
                        duplicate: false,
                        accepted: false,
                        flow_id: event.payload().ok().and_then(|p| p.flow_id()),
                        error: Some(info),
                        actions: Vec::new(),
                    },
                    efx,
                )
            }
        };

        let delta = collect_delta(&inner.workflow, &fx);
        let record = JournalRecord::Event {
            event,
            ack: ack.clone(),
            delta,
            actions: sequence(&inner, fx.actions),
        };
        let actions = Self::commit_record(&mut inner, record)?;
        Ok(Ack { actions, ..ack })
    }

    /// Journals `record`, then applies it; returns its sequenced actions.
    fn commit_record(inner: &mut Inner, record: JournalRecord) -> Result<Vec<SequencedAction>, JournalError> {
        if let Some(j) = inner.journal.as_mut() {
            j.append(&record)?;
        }
        apply_record(inner, &record);
        Ok(record.actions().to_vec())
    }

    /// Expires idle update flows as of `now`.
    pub fn sweep(&self, now: DateTime<Utc>) -> Result<Vec<Uuid>, JournalError> {
        let mut inner = self.lock();
        let mut fx = Effects::new(IdGen::new(format!("sweep:{}", now.to_rfc3339())), now);
        let expired = inner.workflow.sweep(&mut fx);
        if expired.is_empty() {
            return Ok(expired);
        }
        let delta = collect_delta(&inner.workflow, &fx);
        let record = JournalRecord::Sweep {
            at: now,
            delta,
            actions: sequence(&inner, fx.actions),
        };
        Self::commit_record(&mut inner, record)?;
        Ok(expired)
    }

    /// Actions with `seq > since`, in order.
    pub fn actions_since(&self, since: u64) -> Vec<SequencedAction> {
        let inner = self.lock();
        let start = inner.actions.partition_point(|a| a.seq <= since);
        inner.actions[start..].to_vec()
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().next_seq - 1
    }

    pub fn flow(&self, flow_id: Uuid) -> Option<FlowInstance> {
        self.lock().workflow.flow(flow_id).cloned()
    }

    pub fn proposal(&self, proposal_id: Uuid) -> Option<EditProposal> {
        self.lock().workflow.proposal(proposal_id).cloned()
    }

    pub fn discussion(&self, conversation_id: &str) -> Option<Discussion> {
        self.lock().workflow.discussion(conversation_id).cloned()
    }

    pub fn workflow_state(&self) -> WorkflowState {
        self.lock().workflow.state().clone()
    }

    pub fn repo(&self) -> RepositoryHandle {
        self.lock().workflow.repo().clone()
    }

    pub fn documents(&self) -> Result<DocumentListing, RepoError> {
        let repo = self.repo();
        Ok(DocumentListing {
            head: repo.head()?,
            documents: repo.list_documents()?,
        })
    }

    pub fn document(&self, path: &str) -> Result<DocumentFile, RepoError> {
        self.repo().read_document(path, None)
    }

    pub fn history(&self, path: &str) -> Result<Vec<RevisionRecord>, RepoError> {
        self.repo().history(path)
    }
}

const KNOWN_BUTTONS: [&str; 11] = [
    buttons::START_DISCUSSION,
    buttons::NEXT_SUGGESTION,
    buttons::CREATE_DOCUMENT,
    buttons::APPROVE,
    buttons::REJECT,
    buttons::REGENERATE,
    buttons::INVITE,
    buttons::HELPFUL,
    buttons::NOT_HELPFUL,
    buttons::UPDATE_DOCUMENT,
    buttons::RESOLVE,
];

fn sequence(inner: &Inner, actions: Vec<ChatAction>) -> Vec<SequencedAction> {
    actions
        .into_iter()
        .enumerate()
        .map(|(i, action)| SequencedAction {
            seq: inner.next_seq + i as u64,
            action,
        })
        .collect()
}

fn collect_delta(workflow: &Workflow, fx: &Effects) -> StateDelta {
    StateDelta {
        flows: fx.flows.iter().filter_map(|id| workflow.flow(*id).cloned()).collect(),
        proposals: fx
            .proposals
            .iter()
            .filter_map(|id| workflow.proposal(*id).cloned())
            .collect(),
        discussions: fx
            .discussions
            .iter()
            .filter_map(|id| workflow.discussion(id).cloned())
            .collect(),
    }
}

fn dispatch(
    wf: &mut Workflow,
    fx: &mut Effects,
    event: &ChatEvent,
    payload: Payload,
) -> Result<Option<Uuid>, WorkflowError> {
    let user = event.user_id.as_str();
    match payload {
        Payload::Mention(m) => {
            let message = event.message().expect("mention carries a message");
            wf.record_discussion_message(fx, message.clone());
            wf.handle_mention(fx, &event.channel_id, user, message, m.recent_messages)
                .map(Some)
        }
        Payload::Dm(_) => {
            let message = event.message().expect("dm carries a message");
            if wf.record_discussion_message(fx, message.clone()) {
                let flow_id = wf.discussion(&event.channel_id).map(|d| d.flow_id);
                return Ok(flow_id);
            }
            wf.handle_direct_question(fx, &event.channel_id, user, message).map(Some)
        }
        Payload::Selection(s) => wf.select_messages(fx, s.flow_id, user, &s.selected).map(|_| Some(s.flow_id)),
        Payload::Button(b) => {
            let flow = b.flow_id;
            match b.action_id.as_str() {
                buttons::START_DISCUSSION => wf.start_discussion(fx, flow, user).map(|_| ()),
                buttons::NEXT_SUGGESTION => wf.next_suggestion(fx, flow, user),
                buttons::CREATE_DOCUMENT => wf.create_document(fx, flow, user),
                buttons::APPROVE => wf.manager_decide(fx, flow, user, Decision::Approve).map(|_| ()),
                buttons::REJECT => wf.manager_decide(fx, flow, user, Decision::Reject).map(|_| ()),
                buttons::REGENERATE => wf.regenerate(fx, flow, user),
                buttons::INVITE => {
                    wf.invite_participant(fx, flow, user, b.invitee_id.as_deref().unwrap_or_default())
                }
                buttons::HELPFUL => wf.mark_helpful(fx, flow, user),
                buttons::NOT_HELPFUL => wf.escalate_question(fx, flow, user).map(|_| ()),
                buttons::UPDATE_DOCUMENT => return wf.spawn_update(fx, flow, user, None).map(Some),
                buttons::RESOLVE => wf.resolve_question(fx, flow, user),
                other => unreachable!("action {other} checked before dispatch"),
            }
            .map(|_| Some(flow))
        }
    }
}
