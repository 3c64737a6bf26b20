//! Outbound chat actions and their blocks.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::assistant::EditDiff;
use crate::repo::SourceMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    PostMessage,
    EphemeralMessage,
    OpenConversation,
    InviteUser,
}

/// Button identifiers carried back in `button` events.
pub mod buttons {
    pub const START_DISCUSSION: &str = "start_discussion";
    pub const NEXT_SUGGESTION: &str = "next_suggestion";
    pub const CREATE_DOCUMENT: &str = "create_document";
    pub const APPROVE: &str = "approve";
    pub const REJECT: &str = "reject";
    pub const REGENERATE: &str = "regenerate";
    pub const INVITE: &str = "invite";
    pub const HELPFUL: &str = "helpful";
    pub const NOT_HELPFUL: &str = "not_helpful";
    pub const UPDATE_DOCUMENT: &str = "update_document";
    pub const RESOLVE: &str = "resolve";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Button {
    pub action_id: String,
    pub label: String,
    pub flow_id: Uuid,
}

impl Button {
    pub fn new(action_id: &str, label: &str, flow_id: Uuid) -> Self {
        Self {
            action_id: action_id.to_string(),
            label: label.to_string(),
            flow_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Block {
    Text {
        text: String,
    },
    DiffView {
        doc_path: String,
        diff: EditDiff,
    },
    ButtonRow {
        buttons: Vec<Button>,
    },
    MessageSelect {
        flow_id: Uuid,
        messages: Vec<SourceMessage>,
    },
}

impl Block {
    pub fn text(text: impl Into<String>) -> Self {
        Block::Text { text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatAction {
    pub action_id: Uuid,
    pub kind: ActionKind,
    /// Channel or conversation id.
    pub target: String,
    /// Recipient of an ephemeral message, or the invitee.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    /// Members of an opened conversation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
    pub blocks: Vec<Block>,
}

/// An action as delivered on the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencedAction {
    pub seq: u64,
    #[serde(flatten)]
    pub action: ChatAction,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let action = SequencedAction {
            seq: 7,
            action: ChatAction {
                action_id: Uuid::nil(),
                kind: ActionKind::EphemeralMessage,
                target: "C1".into(),
                user_id: Some("U1".into()),
                members: vec![],
                blocks: vec![
                    Block::text("hi"),
                    Block::ButtonRow {
                        buttons: vec![Button::new(buttons::APPROVE, "Approve", Uuid::nil())],
                    },
                ],
            },
        };
        let json = serde_json::to_value(&action).unwrap();
        assert_eq!(json["seq"], 7);
        assert_eq!(json["kind"], "ephemeral_message");
        assert_eq!(json["blocks"][0], serde_json::json!({"kind": "text", "text": "hi"}));
        assert_eq!(json["blocks"][1]["kind"], "button_row");
        assert!(json.get("members").is_none());
        let back: SequencedAction = serde_json::from_value(json).unwrap();
        assert_eq!(back, action);
    }
}
