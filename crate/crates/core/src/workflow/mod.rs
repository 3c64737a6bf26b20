//! Requester, Questioner and Manager flows.
//!
//! Every state change goes through [`state::transition`]; operations check
//! legality before doing any work, so a rejected event leaves the flow as it
//! was. Operations append outbound actions to an [`Effects`] value and mark
//! which records they touched so the gateway can journal them.

pub mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub use state::{transition, FlowKind, FlowState, IllegalTransition, Trigger};

use crate::assistant::{
    Answer, Assistant, AssistantError, DocTarget, EditProposal, ProposalState,
};
use crate::gateway::action::{buttons, ActionKind, Block, Button, ChatAction};
use crate::ids::IdGen;
use crate::index::{IndexError, KnowledgeIndex};
use crate::repo::{
    ConversationContext, CommitRequest, DocumentFile, ExpectedBase, RepoError, RepositoryHandle,
    Revision, SourceMessage,
};
use crate::text::slugify;

pub const DEFAULT_SELECTION_WINDOW: usize = 10;
pub const DEFAULT_ANSWER_TOP_K: usize = 4;
pub const DEFAULT_FLOW_TTL_HOURS: u64 = 72;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowConfig {
    pub managers: Vec<String>,
    pub selection_window: usize,
    pub answer_top_k: usize,
    pub flow_ttl: Duration,
    /// Rebuild the index on a background thread after an approval.
    pub background_rebuild: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            managers: Vec::new(),
            selection_window: DEFAULT_SELECTION_WINDOW,
            answer_top_k: DEFAULT_ANSWER_TOP_K,
            flow_ttl: Duration::from_secs(DEFAULT_FLOW_TTL_HOURS * 3600),
            background_rebuild: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Requester,
    Questioner,
    Manager,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub message: SourceMessage,
    pub answer: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowInstance {
    pub flow_id: Uuid,
    pub kind: FlowKind,
    pub state: FlowState,
    pub channel_id: String,
    pub initiator_id: String,
    pub proposal: Option<EditProposal>,
    pub candidate_cursor: usize,
    /// Ranked document paths computed at selection time.
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub offered_messages: Vec<SourceMessage>,
    #[serde(default)]
    pub selected_messages: Vec<SourceMessage>,
    pub discussion_id: Option<String>,
    /// Every proposal issued by this flow, oldest first.
    #[serde(default)]
    pub proposal_history: Vec<Uuid>,
    #[serde(default)]
    pub change_summary: Option<String>,
    #[serde(default)]
    pub question: Option<QuestionRecord>,
    /// Update flow spawned by an escalated question.
    #[serde(default)]
    pub escalated_to: Option<Uuid>,
    /// Question flow this update flow was spawned from.
    #[serde(default)]
    pub spawned_from: Option<Uuid>,
    #[serde(default)]
    pub applied_revision: Option<Revision>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// A conversation opened by the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discussion {
    pub conversation_id: String,
    pub flow_id: Uuid,
    pub members: Vec<String>,
    /// Human messages seen in the conversation, oldest first.
    pub transcript: Vec<SourceMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRef {
    pub channel_id: String,
    pub timestamp: String,
}

impl From<&SourceMessage> for MessageRef {
    fn from(m: &SourceMessage) -> Self {
        Self {
            channel_id: m.channel_id.clone(),
            timestamp: m.timestamp.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("unknown flow {0}")]
    UnknownFlow(Uuid),
    #[error("flow {0} is not a {1:?} flow")]
    WrongKind(Uuid, FlowKind),
    #[error("selected message was not offered: {0}")]
    SelectionNotOffered(String),
    #[error("no messages selected")]
    EmptySelection,
    #[error("no managers are configured")]
    NoManagersConfigured,
    #[error("{0} is not a member of the discussion")]
    NotAMember(String),
    #[error("{0} is not a manager")]
    NotAManager(String),
    #[error("only {owner} can act on this flow")]
    NotFlowOwner { owner: String },
    #[error("flow has no active proposal")]
    NoActiveProposal,
    #[error(transparent)]
    Assistant(#[from] AssistantError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl WorkflowError {
    /// Stable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::IllegalTransition(_) => "IllegalTransition",
            WorkflowError::UnknownFlow(_) => "UnknownFlow",
            WorkflowError::WrongKind(..) => "WrongFlowKind",
            WorkflowError::SelectionNotOffered(_) => "SelectionNotOffered",
            WorkflowError::EmptySelection => "EmptySelection",
            WorkflowError::NoManagersConfigured => "NoManagersConfigured",
            WorkflowError::NotAMember(_) => "NotAMember",
            WorkflowError::NotAManager(_) => "NotAManager",
            WorkflowError::NotFlowOwner { .. } => "NotFlowOwner",
            WorkflowError::NoActiveProposal => "NoActiveProposal",
            WorkflowError::Assistant(AssistantError::ProviderUnavailable(_)) => "ProviderUnavailable",
            WorkflowError::Assistant(AssistantError::DegenerateOutput(_)) => "DegenerateOutput",
            WorkflowError::Assistant(_) => "AssistantError",
            WorkflowError::Index(IndexError::ProviderUnavailable(_)) => "ProviderUnavailable",
            WorkflowError::Index(_) | WorkflowError::Repo(_) => "RepositoryError",
        }
    }

    /// Transient failures may succeed when the same event is delivered again.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            WorkflowError::Assistant(AssistantError::ProviderUnavailable(_))
                | WorkflowError::Index(_)
                | WorkflowError::Repo(RepoError::Io(_) | RepoError::Git { .. })
        )
    }
}

pub type Result<T, E = WorkflowError> = std::result::Result<T, E>;

/// Side effects produced while handling one event.
#[derive(Debug)]
pub struct Effects {
    pub ids: IdGen,
    pub now: DateTime<Utc>,
    pub actions: Vec<ChatAction>,
    pub flows: BTreeSet<Uuid>,
    pub proposals: BTreeSet<Uuid>,
    pub discussions: BTreeSet<String>,
}

impl Effects {
    pub fn new(ids: IdGen, now: DateTime<Utc>) -> Self {
        Self {
            ids,
            now,
            actions: Vec::new(),
            flows: BTreeSet::new(),
            proposals: BTreeSet::new(),
            discussions: BTreeSet::new(),
        }
    }

    fn emit(&mut self, kind: ActionKind, target: &str, blocks: Vec<Block>) -> &mut ChatAction {
        let action_id = self.ids.next_uuid();
        self.actions.push(ChatAction {
            action_id,
            kind,
            target: target.to_string(),
            user_id: None,
            members: Vec::new(),
            blocks,
        });
        self.actions.last_mut().expect("just pushed")
    }

    fn post(&mut self, target: &str, blocks: Vec<Block>) {
        self.emit(ActionKind::PostMessage, target, blocks);
    }

    fn ephemeral(&mut self, target: &str, user: &str, blocks: Vec<Block>) {
        self.emit(ActionKind::EphemeralMessage, target, blocks).user_id = Some(user.to_string());
    }
}

/// Flow, proposal and discussion records. Serializable so the gateway can
/// journal and restore them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub flows: BTreeMap<Uuid, FlowInstance>,
    pub proposals: BTreeMap<Uuid, EditProposal>,
    pub discussions: BTreeMap<String, Discussion>,
}

pub struct Workflow {
    config: WorkflowConfig,
    repo: RepositoryHandle,
    index: Arc<KnowledgeIndex>,
    assistant: Assistant,
    state: WorkflowState,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow")
            .field("config", &self.config)
            .field("flows", &self.state.flows.len())
            .finish_non_exhaustive()
    }
}

fn mention(user: &str) -> String {
    format!("<@{user}>")
}

enum Offer {
    Proposal(EditProposal),
    Exhausted,
}

impl Workflow {
    pub fn new(
        config: WorkflowConfig,
        repo: RepositoryHandle,
        index: Arc<KnowledgeIndex>,
        assistant: Assistant,
    ) -> Self {
        Self {
            config,
            repo,
            index,
            assistant,
            state: WorkflowState::default(),
        }
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn repo(&self) -> &RepositoryHandle {
        &self.repo
    }

    pub fn index(&self) -> &Arc<KnowledgeIndex> {
        &self.index
    }

    pub fn state(&self) -> &WorkflowState {
        &self.state
    }

    pub fn restore(&mut self, state: WorkflowState) {
        self.state = state;
    }

    pub fn state_mut(&mut self) -> &mut WorkflowState {
        &mut self.state
    }

    pub fn flow(&self, flow_id: Uuid) -> Option<&FlowInstance> {
        self.state.flows.get(&flow_id)
    }

    pub fn proposal(&self, proposal_id: Uuid) -> Option<&EditProposal> {
        self.state.proposals.get(&proposal_id)
    }

    pub fn discussion(&self, conversation_id: &str) -> Option<&Discussion> {
        self.state.discussions.get(conversation_id)
    }

    pub fn is_manager(&self, user_id: &str) -> bool {
        self.config.managers.iter().any(|m| m == user_id)
    }

    pub fn role_of(&self, flow: &FlowInstance, user_id: &str) -> Option<Role> {
        if self.is_manager(user_id) {
            Some(Role::Manager)
        } else if flow.initiator_id == user_id {
            Some(match flow.kind {
                FlowKind::Update => Role::Requester,
                FlowKind::Question => Role::Questioner,
            })
        } else {
            None
        }
    }

    fn flow_ref(&self, flow_id: Uuid, kind: FlowKind) -> Result<&FlowInstance> {
        let flow = self
            .state
            .flows
            .get(&flow_id)
            .ok_or(WorkflowError::UnknownFlow(flow_id))?;
        if flow.kind != kind {
            return Err(WorkflowError::WrongKind(flow_id, kind));
        }
        Ok(flow)
    }

    /// Checks that `trigger` is legal for the flow without changing it.
    fn check(&self, flow_id: Uuid, kind: FlowKind, trigger: Trigger) -> Result<&FlowInstance> {
        let flow = self.flow_ref(flow_id, kind)?;
        transition(flow.kind, flow.state, trigger)?;
        Ok(flow)
    }

    fn check_owner(flow: &FlowInstance, user_id: &str) -> Result<()> {
        if flow.initiator_id == user_id {
            Ok(())
        } else {
            Err(WorkflowError::NotFlowOwner {
                owner: flow.initiator_id.clone(),
            })
        }
    }

    fn check_member(&self, flow: &FlowInstance, user_id: &str) -> Result<&Discussion> {
        let discussion = flow
            .discussion_id
            .as_deref()
            .and_then(|id| self.state.discussions.get(id))
            .ok_or(WorkflowError::NotAMember(user_id.to_string()))?;
        if discussion.members.iter().any(|m| m == user_id) {
            Ok(discussion)
        } else {
            Err(WorkflowError::NotAMember(user_id.to_string()))
        }
    }

    fn fire(&mut self, fx: &mut Effects, flow_id: Uuid, trigger: Trigger) -> Result<FlowState> {
        let flow = self
            .state
            .flows
            .get_mut(&flow_id)
            .ok_or(WorkflowError::UnknownFlow(flow_id))?;
        let next = transition(flow.kind, flow.state, trigger)?;
        flow.state = next;
        flow.updated_at = fx.now;
        fx.flows.insert(flow_id);
        Ok(next)
    }

    fn flow_mut(&mut self, fx: &mut Effects, flow_id: Uuid) -> &mut FlowInstance {
        fx.flows.insert(flow_id);
        let flow = self.state.flows.get_mut(&flow_id).expect("flow checked");
        flow.updated_at = fx.now;
        flow
    }

    fn set_proposal_state(&mut self, fx: &mut Effects, proposal_id: Uuid, state: ProposalState) {
        if let Some(p) = self.state.proposals.get_mut(&proposal_id) {
            p.state = state;
            fx.proposals.insert(proposal_id);
        }
        for flow in self.state.flows.values_mut() {
            if let Some(p) = flow.proposal.as_mut().filter(|p| p.proposal_id == proposal_id) {
                p.state = state;
            }
        }
    }

    /// Makes `proposal` the flow's active proposal, superseding the previous one.
    fn install_proposal(&mut self, fx: &mut Effects, flow_id: Uuid, proposal: EditProposal) {
        let previous = self.state.flows[&flow_id].proposal.as_ref().map(|p| p.proposal_id);
        if let Some(prev) = previous {
            self.set_proposal_state(fx, prev, ProposalState::Superseded);
        }
        fx.proposals.insert(proposal.proposal_id);
        self.state.proposals.insert(proposal.proposal_id, proposal.clone());
        let flow = self.flow_mut(fx, flow_id);
        flow.proposal_history.push(proposal.proposal_id);
        flow.proposal = Some(proposal);
    }

    fn clear_proposal(&mut self, fx: &mut Effects, flow_id: Uuid) {
        let previous = self.state.flows[&flow_id].proposal.as_ref().map(|p| p.proposal_id);
        if let Some(prev) = previous {
            self.set_proposal_state(fx, prev, ProposalState::Superseded);
        }
        self.flow_mut(fx, flow_id).proposal = None;
    }

    fn new_flow(
        &mut self,
        fx: &mut Effects,
        kind: FlowKind,
        channel_id: &str,
        initiator_id: &str,
    ) -> Uuid {
        let flow_id = fx.ids.next_uuid();
        self.state.flows.insert(
            flow_id,
            FlowInstance {
                flow_id,
                kind,
                state: kind.initial_state(),
                channel_id: channel_id.to_string(),
                initiator_id: initiator_id.to_string(),
                proposal: None,
                candidate_cursor: 0,
                candidates: Vec::new(),
                offered_messages: Vec::new(),
                selected_messages: Vec::new(),
                discussion_id: None,
                proposal_history: Vec::new(),
                change_summary: None,
                question: None,
                escalated_to: None,
                spawned_from: None,
                applied_revision: None,
                created_at: fx.now,
                updated_at: fx.now,
            },
        );
        fx.flows.insert(flow_id);
        flow_id
    }

    fn members_with_managers(&self, initiator: &str) -> Vec<String> {
        let mut members = vec![initiator.to_string()];
        for m in &self.config.managers {
            if !members.contains(m) {
                members.push(m.clone());
            }
        }
        members
    }

    // ---- update flow -------------------------------------------------

    /// Starts an update flow and offers the recent messages for selection.
    /// `recent` is oldest first; the mention itself is added if missing.
    pub fn handle_mention(
        &mut self,
        fx: &mut Effects,
        channel_id: &str,
        user_id: &str,
        mention_message: SourceMessage,
        recent: Vec<SourceMessage>,
    ) -> Result<Uuid> {
        if let Some(question_flow) = self.question_discussion_for(channel_id) {
            return self.spawn_update(fx, question_flow, user_id, Some(mention_message));
        }
        let mut recent = if recent.is_empty() {
            self.state
                .discussions
                .get(channel_id)
                .map(|d| d.transcript.clone())
                .unwrap_or_default()
        } else {
            recent
        };
        if !recent.iter().any(|m| m.key() == mention_message.key()) {
            recent.push(mention_message);
        }
        Ok(self.open_update_flow(fx, channel_id, user_id, recent, None))
    }

    fn open_update_flow(
        &mut self,
        fx: &mut Effects,
        channel_id: &str,
        user_id: &str,
        recent: Vec<SourceMessage>,
        spawned_from: Option<Uuid>,
    ) -> Uuid {
        let mut window: Vec<SourceMessage> = recent.into_iter().filter(SourceMessage::is_valid).collect();
        let skip = window.len().saturating_sub(self.config.selection_window);
        window.drain(..skip);

        let flow_id = self.new_flow(fx, FlowKind::Update, channel_id, user_id);
        let flow = self.flow_mut(fx, flow_id);
        flow.offered_messages = window.clone();
        flow.spawned_from = spawned_from;

        fx.ephemeral(
            channel_id,
            user_id,
            vec![
                Block::text(format!("{} requested CHOIR to edit the document.", mention(user_id))),
                Block::text("Select Messages to Save"),
                Block::MessageSelect {
                    flow_id,
                    messages: window,
                },
            ],
        );
        flow_id
    }

    pub fn select_messages(
        &mut self,
        fx: &mut Effects,
        flow_id: Uuid,
        user_id: &str,
        selected: &[MessageRef],
    ) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Update, Trigger::SelectMessages)?;
        Self::check_owner(flow, user_id)?;
        if selected.is_empty() {
            return Err(WorkflowError::EmptySelection);
        }
        for r in selected {
            if !flow
                .offered_messages
                .iter()
                .any(|m| m.channel_id == r.channel_id && m.timestamp == r.timestamp)
            {
                return Err(WorkflowError::SelectionNotOffered(format!(
                    "{}/{}",
                    r.channel_id, r.timestamp
                )));
            }
        }
        // Offered order, not click order.
        let chosen: Vec<SourceMessage> = flow
            .offered_messages
            .iter()
            .filter(|m| {
                selected
                    .iter()
                    .any(|r| m.channel_id == r.channel_id && m.timestamp == r.timestamp)
            })
            .cloned()
            .collect();

        let snapshot = self.index.ensure_current(&self.repo)?;
        let query = chosen.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n");
        let ranked = snapshot.rank_documents(
            self.index.embedder(),
            &query,
            self.index.config().relevance_threshold,
        )?;
        let candidates: Vec<String> = ranked.into_iter().map(|d| d.doc_path).collect();

        let offer = if candidates.is_empty() {
            Offer::Proposal(self.creation_proposal(fx, &chosen, 0)?)
        } else {
            self.offer_from(fx, &candidates, 0, &chosen)?
        };

        let flow = self.flow_mut(fx, flow_id);
        flow.selected_messages = chosen;
        flow.candidate_cursor = 0;
        flow.candidates = candidates;
        self.fire(fx, flow_id, Trigger::SelectMessages)?;
        self.present_offer(fx, flow_id, offer);
        Ok(())
    }

    pub fn next_suggestion(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Update, Trigger::NextSuggestion)?;
        Self::check_owner(flow, user_id)?;
        let next = (flow.candidate_cursor + 1).min(flow.candidates.len());
        let candidates = flow.candidates.clone();
        let messages = flow.selected_messages.clone();
        let offer = self.offer_from(fx, &candidates, next, &messages)?;
        let cursor = match &offer {
            Offer::Proposal(p) => p.candidate_rank,
            Offer::Exhausted => candidates.len(),
        };
        self.flow_mut(fx, flow_id).candidate_cursor = cursor;
        self.fire(fx, flow_id, Trigger::NextSuggestion)?;
        self.present_offer(fx, flow_id, offer);
        Ok(())
    }

    /// "Create a new document altogether".
    pub fn create_document(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Update, Trigger::CreateDocument)?;
        Self::check_owner(flow, user_id)?;
        let messages = flow.selected_messages.clone();
        let rank = flow.candidates.len();
        let proposal = self.creation_proposal(fx, &messages, rank)?;
        self.flow_mut(fx, flow_id).candidate_cursor = rank;
        self.fire(fx, flow_id, Trigger::CreateDocument)?;
        self.present_offer(fx, flow_id, Offer::Proposal(proposal));
        Ok(())
    }

    /// First candidate at or after `start` that yields a usable proposal.
    fn offer_from(
        &self,
        fx: &mut Effects,
        candidates: &[String],
        start: usize,
        messages: &[SourceMessage],
    ) -> Result<Offer> {
        for (rank, path) in candidates.iter().enumerate().skip(start) {
            let document = match self.repo.read_document(path, None) {
                Ok(d) => d,
                Err(RepoError::DocumentNotFound(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            match self.assistant.propose_edit(&document, messages) {
                Ok((content, title)) => {
                    return Ok(Offer::Proposal(EditProposal {
                        proposal_id: fx.ids.next_uuid(),
                        doc_path: DocTarget::Existing(document.path.clone()),
                        base_revision: document.revision.clone(),
                        base_content: document.content,
                        proposed_content: content,
                        change_title: title,
                        source_messages: messages.to_vec(),
                        candidate_rank: rank,
                        state: ProposalState::Offered,
                    }))
                }
                Err(AssistantError::DegenerateOutput(reason)) => {
                    tracing::info!(path = %path, %reason, "skipping candidate without a usable edit");
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Offer::Exhausted)
    }

    /// Path for a new document, from the most recent selected message.
    fn new_document_path(&self, messages: &[SourceMessage]) -> Result<String> {
        let mut stem = messages
            .last()
            .map(|m| slugify(&m.text, 5))
            .unwrap_or_default();
        if stem.is_empty() {
            stem = "untitled".to_string();
        }
        let existing = self.repo.list_documents()?;
        let mut path = format!("{stem}.md");
        let mut n = 2;
        while existing.contains(&path) {
            path = format!("{stem}-{n}.md");
            n += 1;
        }
        Ok(path)
    }

    fn creation_proposal(
        &self,
        fx: &mut Effects,
        messages: &[SourceMessage],
        rank: usize,
    ) -> Result<EditProposal> {
        let path = self.new_document_path(messages)?;
        let document = DocumentFile::blank(path.clone());
        let (content, title) = self.assistant.propose_edit(&document, messages)?;
        Ok(EditProposal {
            proposal_id: fx.ids.next_uuid(),
            doc_path: DocTarget::New(path),
            base_revision: self.repo.head()?,
            base_content: String::new(),
            proposed_content: content,
            change_title: title,
            source_messages: messages.to_vec(),
            candidate_rank: rank,
            state: ProposalState::Offered,
        })
    }

    fn present_offer(&mut self, fx: &mut Effects, flow_id: Uuid, offer: Offer) {
        let (channel, user) = {
            let f = &self.state.flows[&flow_id];
            (f.channel_id.clone(), f.initiator_id.clone())
        };
        match offer {
            Offer::Proposal(proposal) => {
                let file_line = match &proposal.doc_path {
                    DocTarget::Existing(p) => format!("File: {p}"),
                    DocTarget::New(p) => format!("New file: {p}"),
                };
                let blocks = vec![
                    Block::text("Document Updates Suggestion"),
                    Block::text(file_line),
                    Block::DiffView {
                        doc_path: proposal.doc_path.path().to_string(),
                        diff: proposal.diff(),
                    },
                    Block::ButtonRow {
                        buttons: vec![
                            Button::new(buttons::START_DISCUSSION, "Start Discussion", flow_id),
                            Button::new(buttons::NEXT_SUGGESTION, "Next Suggestion", flow_id),
                        ],
                    },
                ];
                self.install_proposal(fx, flow_id, proposal);
                fx.ephemeral(&channel, &user, blocks);
            }
            Offer::Exhausted => {
                self.clear_proposal(fx, flow_id);
                fx.ephemeral(
                    &channel,
                    &user,
                    vec![
                        Block::text("No other existing document matches these messages."),
                        Block::ButtonRow {
                            buttons: vec![Button::new(
                                buttons::CREATE_DOCUMENT,
                                "Create a new document altogether",
                                flow_id,
                            )],
                        },
                    ],
                );
            }
        }
    }

    fn history_summary(&self, path: &str) -> Result<String> {
        let records = match self.repo.history(path) {
            Ok(r) => r,
            Err(RepoError::DocumentNotFound(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(self.assistant.summarize_context(&records)?)
    }

    fn decision_card(flow_id: Uuid, proposal: &EditProposal) -> Vec<Block> {
        vec![
            Block::text(format!("Proposed change to {}: {}", proposal.doc_path.path(), proposal.change_title)),
            Block::DiffView {
                doc_path: proposal.doc_path.path().to_string(),
                diff: proposal.diff(),
            },
            Block::ButtonRow {
                buttons: vec![
                    Button::new(buttons::APPROVE, "Approve", flow_id),
                    Button::new(buttons::REJECT, "Reject", flow_id),
                    Button::new(buttons::REGENERATE, "Regenerate from this discussion", flow_id),
                ],
            },
        ]
    }

    /// Opens a conversation with the requester and every manager, seeded
    /// with the prior-revision context, a change summary and the decision card.
    pub fn start_discussion(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<String> {
        let flow = self.check(flow_id, FlowKind::Update, Trigger::StartDiscussion)?;
        Self::check_owner(flow, user_id)?;
        let proposal = flow.proposal.clone().ok_or(WorkflowError::NoActiveProposal)?;
        if self.config.managers.is_empty() {
            return Err(WorkflowError::NoManagersConfigured);
        }
        let initiator = flow.initiator_id.clone();

        let context_summary = self.history_summary(proposal.doc_path.path())?;
        let change_summary = self
            .assistant
            .summarize_change(&proposal.base_content, &proposal.proposed_content)?;

        let conversation_id = fx.ids.next_uuid().to_string();
        let members = self.members_with_managers(&initiator);
        self.state.discussions.insert(
            conversation_id.clone(),
            Discussion {
                conversation_id: conversation_id.clone(),
                flow_id,
                members: members.clone(),
                transcript: Vec::new(),
            },
        );
        fx.discussions.insert(conversation_id.clone());

        let opened = fx.emit(
            ActionKind::OpenConversation,
            &conversation_id,
            vec![Block::text(format!(
                "{} proposed an update to {} and would like a manager to review it.",
                mention(&initiator),
                proposal.doc_path.path()
            ))],
        );
        opened.members = members;

        {
            let flow = self.flow_mut(fx, flow_id);
            flow.discussion_id = Some(conversation_id.clone());
            flow.change_summary = Some(change_summary.clone());
        }
        self.fire(fx, flow_id, Trigger::StartDiscussion)?;
        self.set_proposal_state(fx, proposal.proposal_id, ProposalState::InDiscussion);

        fx.post(
            &conversation_id,
            vec![Block::text("Context from previous revisions"), Block::text(context_summary)],
        );
        fx.post(&conversation_id, vec![Block::text(format!("Summary of the change: {change_summary}"))]);
        fx.post(&conversation_id, Self::decision_card(flow_id, &proposal));
        self.fire(fx, flow_id, Trigger::DiscussionSeeded)?;
        Ok(conversation_id)
    }

    pub fn invite_participant(
        &mut self,
        fx: &mut Effects,
        flow_id: Uuid,
        inviter_id: &str,
        invitee_id: &str,
    ) -> Result<()> {
        let flow = self
            .state
            .flows
            .get(&flow_id)
            .ok_or(WorkflowError::UnknownFlow(flow_id))?;
        transition(flow.kind, flow.state, Trigger::Invite)?;
        let discussion = self.check_member(flow, inviter_id)?;
        if discussion.members.iter().any(|m| m == invitee_id) {
            return Ok(());
        }
        let conversation_id = discussion.conversation_id.clone();
        self.state
            .discussions
            .get_mut(&conversation_id)
            .expect("checked")
            .members
            .push(invitee_id.to_string());
        fx.discussions.insert(conversation_id.clone());
        self.fire(fx, flow_id, Trigger::Invite)?;
        fx.emit(
            ActionKind::InviteUser,
            &conversation_id,
            vec![Block::text(format!(
                "{} invited {} to this discussion.",
                mention(inviter_id),
                mention(invitee_id)
            ))],
        )
        .user_id = Some(invitee_id.to_string());
        Ok(())
    }

    /// Approval commits the proposal with its conversation context; a stale
    /// base regenerates the proposal instead.
    pub fn manager_decide(
        &mut self,
        fx: &mut Effects,
        flow_id: Uuid,
        user_id: &str,
        decision: Decision,
    ) -> Result<Option<Revision>> {
        let trigger = match decision {
            Decision::Approve => Trigger::Approve,
            Decision::Reject => Trigger::Reject,
        };
        let flow = self.check(flow_id, FlowKind::Update, trigger)?;
        if !self.is_manager(user_id) {
            return Err(WorkflowError::NotAManager(user_id.to_string()));
        }
        let proposal = flow.proposal.clone().ok_or(WorkflowError::NoActiveProposal)?;
        let conversation = flow.discussion_id.clone().unwrap_or_else(|| flow.channel_id.clone());
        let channel = flow.channel_id.clone();
        let initiator = flow.initiator_id.clone();
        let summary = flow.change_summary.clone();

        if decision == Decision::Reject {
            self.fire(fx, flow_id, Trigger::Reject)?;
            self.set_proposal_state(fx, proposal.proposal_id, ProposalState::Rejected);
            fx.post(
                &conversation,
                vec![Block::text(format!(
                    "{} rejected the proposed change to {}. Nothing was committed.",
                    mention(user_id),
                    proposal.doc_path.path()
                ))],
            );
            return Ok(None);
        }

        let path = proposal.doc_path.path().to_string();
        let revision = match self.repo.find_applied(&path, proposal.proposal_id)? {
            // Committed before a crash cut the journal short.
            Some(rev) => rev,
            None => {
                let request = CommitRequest {
                    path: path.clone(),
                    content: proposal.proposed_content.clone(),
                    title: proposal.change_title.clone(),
                    context: ConversationContext {
                        proposal_id: proposal.proposal_id,
                        requester_id: initiator.clone(),
                        approver_id: user_id.to_string(),
                        messages: proposal.source_messages.clone(),
                        summary,
                    },
                    expected_base: ExpectedBase::At(proposal.base_revision.clone()),
                    timestamp: Some(fx.now.timestamp()),
                };
                match self.repo.commit_update(&request) {
                    Ok(rev) => rev,
                    Err(RepoError::StaleBase { .. }) => {
                        self.rebase_proposal(fx, flow_id, &proposal, &conversation)?;
                        return Ok(None);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };

        self.fire(fx, flow_id, Trigger::Approve)?;
        self.set_proposal_state(fx, proposal.proposal_id, ProposalState::Applied);
        self.flow_mut(fx, flow_id).applied_revision = Some(revision.clone());
        fx.post(
            &conversation,
            vec![Block::text(format!(
                "{} approved the change. {} updated at {}.",
                mention(user_id),
                path,
                revision.short()
            ))],
        );
        if channel != conversation {
            fx.post(
                &channel,
                vec![Block::text(format!(
                    "{path} was updated from {}'s request (approved by {}).",
                    mention(&initiator),
                    mention(user_id)
                ))],
            );
        }
        if self.config.background_rebuild {
            self.index.rebuild_in_background(self.repo.clone());
        } else {
            self.index.rebuild(&self.repo)?;
        }
        Ok(Some(revision))
    }

    fn rebase_proposal(
        &mut self,
        fx: &mut Effects,
        flow_id: Uuid,
        stale: &EditProposal,
        conversation: &str,
    ) -> Result<()> {
        let path = stale.doc_path.path();
        let (document, target) = match self.repo.read_document(path, None) {
            Ok(doc) => (doc, DocTarget::Existing(path.to_string())),
            Err(RepoError::DocumentNotFound(_)) => {
                (DocumentFile::blank(path), DocTarget::New(path.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let (content, title) = self.assistant.propose_edit(&document, &stale.source_messages)?;
        let change_summary = self.assistant.summarize_change(&document.content, &content)?;
        let proposal = EditProposal {
            proposal_id: fx.ids.next_uuid(),
            doc_path: target,
            base_revision: self.repo.head()?,
            base_content: document.content,
            proposed_content: content,
            change_title: title,
            source_messages: stale.source_messages.clone(),
            candidate_rank: stale.candidate_rank,
            state: ProposalState::InDiscussion,
        };
        self.fire(fx, flow_id, Trigger::Rebase)?;
        self.install_proposal(fx, flow_id, proposal.clone());
        self.flow_mut(fx, flow_id).change_summary = Some(change_summary.clone());
        let head = proposal
            .base_revision
            .as_ref()
            .map(|r| r.short().to_string())
            .unwrap_or_default();
        let mut blocks = vec![
            Block::text(format!(
                "The document changed meanwhile; the proposal was regenerated against {head}. Please review it again."
            )),
            Block::text(format!("Summary of the change: {change_summary}")),
        ];
        blocks.extend(Self::decision_card(flow_id, &proposal));
        fx.post(conversation, blocks);
        Ok(())
    }

    /// Re-runs the edit with the discussion's messages appended to the sources.
    pub fn regenerate(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Update, Trigger::Regenerate)?;
        let discussion = self.check_member(flow, user_id)?;
        let current = flow.proposal.clone().ok_or(WorkflowError::NoActiveProposal)?;
        let conversation = discussion.conversation_id.clone();
        let mut messages = current.source_messages.clone();
        for m in &discussion.transcript {
            if !messages.iter().any(|x| x.key() == m.key()) {
                messages.push(m.clone());
            }
        }
        let path = current.doc_path.path();
        let (document, target) = match self.repo.read_document(path, None) {
            Ok(doc) => (doc, DocTarget::Existing(path.to_string())),
            Err(RepoError::DocumentNotFound(_)) => {
                (DocumentFile::blank(path), DocTarget::New(path.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let (content, title) = self.assistant.propose_edit(&document, &messages)?;
        let change_summary = self.assistant.summarize_change(&document.content, &content)?;
        let proposal = EditProposal {
            proposal_id: fx.ids.next_uuid(),
            doc_path: target,
            base_revision: self.repo.head()?,
            base_content: document.content,
            proposed_content: content,
            change_title: title,
            source_messages: messages,
            candidate_rank: current.candidate_rank,
            state: ProposalState::InDiscussion,
        };
        self.fire(fx, flow_id, Trigger::Regenerate)?;
        self.install_proposal(fx, flow_id, proposal.clone());
        self.flow_mut(fx, flow_id).change_summary = Some(change_summary.clone());
        let mut blocks = vec![
            Block::text(format!(
                "{} regenerated the proposal from this discussion.",
                mention(user_id)
            )),
            Block::text(format!("Summary of the change: {change_summary}")),
        ];
        blocks.extend(Self::decision_card(flow_id, &proposal));
        fx.post(&conversation, blocks);
        Ok(())
    }

    // ---- question flow -----------------------------------------------

    pub fn handle_direct_question(
        &mut self,
        fx: &mut Effects,
        channel_id: &str,
        user_id: &str,
        message: SourceMessage,
    ) -> Result<Uuid> {
        let snapshot = self.index.ensure_current(&self.repo)?;
        let grounding: Vec<_> = snapshot
            .query_chunks(self.index.embedder(), &message.text, self.config.answer_top_k)?
            .into_iter()
            .map(|s| s.chunk)
            .collect();
        let answer = self.assistant.answer_question(&message.text, &grounding)?;

        let flow_id = self.new_flow(fx, FlowKind::Question, channel_id, user_id);
        self.flow_mut(fx, flow_id).question = Some(QuestionRecord {
            message,
            answer: Some(answer.clone()),
        });
        self.fire(fx, flow_id, Trigger::AnswerPosted)?;

        let mut blocks = vec![Block::text(answer.text.clone())];
        if !answer.cited_chunks.is_empty() {
            blocks.push(Block::text(format!("Sources: {}", answer.cited_chunks.join(", "))));
        }
        blocks.push(Block::ButtonRow {
            buttons: vec![
                Button::new(buttons::HELPFUL, "Helpful", flow_id),
                Button::new(buttons::NOT_HELPFUL, "Not helpful \u{2014} discuss", flow_id),
            ],
        });
        fx.post(channel_id, blocks);
        Ok(flow_id)
    }

    pub fn mark_helpful(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Question, Trigger::MarkHelpful)?;
        Self::check_owner(flow, user_id)?;
        let channel = flow.channel_id.clone();
        self.fire(fx, flow_id, Trigger::MarkHelpful)?;
        fx.ephemeral(&channel, user_id, vec![Block::text("Glad that helped.")]);
        Ok(())
    }

    /// Opens a conversation with the questioner and the managers, seeded
    /// with the question, the answer and its cited chunks.
    pub fn escalate_question(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<String> {
        let flow = self.check(flow_id, FlowKind::Question, Trigger::MarkNotHelpful)?;
        Self::check_owner(flow, user_id)?;
        if self.config.managers.is_empty() {
            return Err(WorkflowError::NoManagersConfigured);
        }
        let question = flow.question.clone().expect("question flows record their question");
        let answer = question.answer.clone().unwrap_or(Answer {
            text: String::new(),
            cited_chunks: Vec::new(),
            no_source: true,
        });
        let questioner = flow.initiator_id.clone();

        let snapshot = self.index.current();
        let cited: Vec<Block> = answer
            .cited_chunks
            .iter()
            .map(|id| {
                let text = snapshot
                    .entries
                    .iter()
                    .find(|e| &e.chunk.chunk_id == id)
                    .map(|e| e.chunk.text.trim_end().to_string())
                    .unwrap_or_default();
                Block::text(format!("[{id}]\n{text}"))
            })
            .collect();

        let conversation_id = fx.ids.next_uuid().to_string();
        let members = self.members_with_managers(&questioner);
        self.state.discussions.insert(
            conversation_id.clone(),
            Discussion {
                conversation_id: conversation_id.clone(),
                flow_id,
                members: members.clone(),
                transcript: vec![question.message.clone()],
            },
        );
        fx.discussions.insert(conversation_id.clone());
        fx.emit(
            ActionKind::OpenConversation,
            &conversation_id,
            vec![Block::text(format!(
                "{} found an answer insufficient and would like to discuss it with a manager.",
                mention(&questioner)
            ))],
        )
        .members = members;

        self.flow_mut(fx, flow_id).discussion_id = Some(conversation_id.clone());
        self.fire(fx, flow_id, Trigger::MarkNotHelpful)?;

        let mut blocks = vec![
            Block::text(format!("Question: {}", question.message.text)),
            Block::text(format!("Answer given: {}", answer.text)),
        ];
        if !cited.is_empty() {
            blocks.push(Block::text("Cited excerpts:"));
            blocks.extend(cited);
        }
        blocks.push(Block::ButtonRow {
            buttons: vec![
                Button::new(buttons::UPDATE_DOCUMENT, "Update the document", flow_id),
                Button::new(buttons::RESOLVE, "Resolved", flow_id),
            ],
        });
        fx.post(&conversation_id, blocks);
        Ok(conversation_id)
    }

    fn question_discussion_for(&self, conversation_id: &str) -> Option<Uuid> {
        let discussion = self.state.discussions.get(conversation_id)?;
        let flow = self.state.flows.get(&discussion.flow_id)?;
        (flow.kind == FlowKind::Question && flow.state == FlowState::DiscussionOpen).then_some(flow.flow_id)
    }

    /// Starts an update flow from an escalation conversation; its selectable
    /// messages are the conversation's messages.
    pub fn spawn_update(
        &mut self,
        fx: &mut Effects,
        question_flow: Uuid,
        user_id: &str,
        trigger_message: Option<SourceMessage>,
    ) -> Result<Uuid> {
        let flow = self.check(question_flow, FlowKind::Question, Trigger::SpawnUpdate)?;
        let discussion = self.check_member(flow, user_id)?;
        let conversation_id = discussion.conversation_id.clone();
        let mut messages = discussion.transcript.clone();
        if let Some(m) = trigger_message {
            if !messages.iter().any(|x| x.key() == m.key()) {
                messages.push(m.clone());
                self.state
                    .discussions
                    .get_mut(&conversation_id)
                    .expect("checked")
                    .transcript
                    .push(m);
                fx.discussions.insert(conversation_id.clone());
            }
        }
        let update = self.open_update_flow(fx, &conversation_id, user_id, messages, Some(question_flow));
        self.flow_mut(fx, question_flow).escalated_to = Some(update);
        self.fire(fx, question_flow, Trigger::SpawnUpdate)?;
        Ok(update)
    }

    pub fn resolve_question(&mut self, fx: &mut Effects, flow_id: Uuid, user_id: &str) -> Result<()> {
        let flow = self.check(flow_id, FlowKind::Question, Trigger::Resolve)?;
        let discussion = self.check_member(flow, user_id)?;
        let conversation = discussion.conversation_id.clone();
        self.fire(fx, flow_id, Trigger::Resolve)?;
        fx.post(
            &conversation,
            vec![Block::text(format!("{} marked the question as resolved.", mention(user_id)))],
        );
        Ok(())
    }

    /// Records a human message posted in a service-opened conversation.
    /// Returns false when `message.channel_id` is not such a conversation.
    pub fn record_discussion_message(&mut self, fx: &mut Effects, message: SourceMessage) -> bool {
        let Some(d) = self.state.discussions.get_mut(&message.channel_id) else {
            return false;
        };
        if !d.transcript.iter().any(|m| m.key() == message.key()) {
            d.transcript.push(message);
            fx.discussions.insert(d.conversation_id.clone());
        }
        true
    }

    /// Moves update flows idle for longer than the TTL to `Abandoned`.
    pub fn sweep(&mut self, fx: &mut Effects) -> Vec<Uuid> {
        let ttl = chrono::Duration::from_std(self.config.flow_ttl).unwrap_or(chrono::Duration::MAX);
        let expired: Vec<Uuid> = self
            .state
            .flows
            .values()
            .filter(|f| {
                f.kind == FlowKind::Update
                    && transition(f.kind, f.state, Trigger::Expire).is_ok()
                    && fx.now - f.updated_at > ttl
            })
            .map(|f| f.flow_id)
            .collect();
        for id in &expired {
            let (channel, user) = {
                let f = &self.state.flows[id];
                (f.channel_id.clone(), f.initiator_id.clone())
            };
            if self.fire(fx, *id, Trigger::Expire).is_ok() {
                fx.ephemeral(
                    &channel,
                    &user,
                    vec![Block::text("This update request expired without a decision.")],
                );
            }
        }
        expired
    }
}
