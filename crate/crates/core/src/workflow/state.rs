//! Transition tables for update and question flows.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Update,
    Question,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowState {
    // update flow
    AwaitingSelection,
    ProposalShown,
    DiscussionOpen,
    AwaitingDecision,
    Applied,
    Rejected,
    Abandoned,
    // question flow
    Asked,
    Answered,
    Resolved,
    EscalatedToUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    SelectMessages,
    NextSuggestion,
    CreateDocument,
    StartDiscussion,
    DiscussionSeeded,
    Invite,
    Approve,
    Reject,
    Rebase,
    Regenerate,
    Expire,
    AnswerPosted,
    MarkHelpful,
    MarkNotHelpful,
    SpawnUpdate,
    Resolve,
}

impl Trigger {
    pub const ALL: [Trigger; 16] = [
        Trigger::SelectMessages,
        Trigger::NextSuggestion,
        Trigger::CreateDocument,
        Trigger::StartDiscussion,
        Trigger::DiscussionSeeded,
        Trigger::Invite,
        Trigger::Approve,
        Trigger::Reject,
        Trigger::Rebase,
        Trigger::Regenerate,
        Trigger::Expire,
        Trigger::AnswerPosted,
        Trigger::MarkHelpful,
        Trigger::MarkNotHelpful,
        Trigger::SpawnUpdate,
        Trigger::Resolve,
    ];
}

impl FlowKind {
    pub fn states(self) -> &'static [FlowState] {
        use FlowState::*;
        match self {
            FlowKind::Update => &[
                AwaitingSelection,
                ProposalShown,
                DiscussionOpen,
                AwaitingDecision,
                Applied,
                Rejected,
                Abandoned,
            ],
            FlowKind::Question => &[Asked, Answered, DiscussionOpen, Resolved, EscalatedToUpdate],
        }
    }

    pub fn initial_state(self) -> FlowState {
        match self {
            FlowKind::Update => FlowState::AwaitingSelection,
            FlowKind::Question => FlowState::Asked,
        }
    }
}

impl FlowState {
    pub fn is_terminal(self) -> bool {
        use FlowState::*;
        matches!(self, Applied | Rejected | Abandoned | Resolved | EscalatedToUpdate)
    }
}

impl fmt::Display for FlowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{trigger:?} is not allowed for a {kind:?} flow in state {state}")]
pub struct IllegalTransition {
    pub kind: FlowKind,
    pub state: FlowState,
    pub trigger: Trigger,
}

/// The only place flow states change.
pub fn transition(kind: FlowKind, state: FlowState, trigger: Trigger) -> Result<FlowState, IllegalTransition> {
    use FlowState::*;
    use Trigger::*;
    let next = match (kind, state, trigger) {
        (FlowKind::Update, AwaitingSelection, SelectMessages) => Some(ProposalShown),
        (FlowKind::Update, ProposalShown, NextSuggestion | CreateDocument) => Some(ProposalShown),
        (FlowKind::Update, ProposalShown, StartDiscussion) => Some(DiscussionOpen),
        (FlowKind::Update, DiscussionOpen, DiscussionSeeded) => Some(AwaitingDecision),
        (FlowKind::Update, DiscussionOpen, Invite) => Some(DiscussionOpen),
        (FlowKind::Update, AwaitingDecision, Approve) => Some(Applied),
        (FlowKind::Update, AwaitingDecision, Reject) => Some(Rejected),
        (FlowKind::Update, AwaitingDecision, Rebase | Regenerate | Invite) => Some(AwaitingDecision),
        (
            FlowKind::Update,
            AwaitingSelection | ProposalShown | DiscussionOpen | AwaitingDecision,
            Expire,
        ) => Some(Abandoned),

        (FlowKind::Question, Asked, AnswerPosted) => Some(Answered),
        (FlowKind::Question, Answered, MarkHelpful) => Some(Resolved),
        (FlowKind::Question, Answered, MarkNotHelpful) => Some(DiscussionOpen),
        (FlowKind::Question, DiscussionOpen, SpawnUpdate) => Some(EscalatedToUpdate),
        (FlowKind::Question, DiscussionOpen, Resolve) => Some(Resolved),
        (FlowKind::Question, DiscussionOpen, Invite) => Some(DiscussionOpen),
        _ => None,
    };
    next.ok_or(IllegalTransition {
        kind,
        state,
        trigger,
    })
}
