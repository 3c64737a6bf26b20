//! Inbound chat events.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::repo::SourceMessage;
use crate::workflow::MessageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Mention,
    Dm,
    Button,
    Selection,
}

/// An event as received. The payload stays raw so the journal keeps
/// exactly what arrived; [`ChatEvent::payload`] types it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEvent {
    pub event_id: Uuid,
    pub workspace_id: String,
    pub kind: EventKind,
    pub channel_id: String,
    pub user_id: String,
    #[serde(default)]
    pub payload: serde_json::Value,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionPayload {
    pub text: String,
    pub message_ts: String,
    /// Recent channel messages, oldest first.
    #[serde(default)]
    pub recent_messages: Vec<SourceMessage>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmPayload {
    pub text: String,
    pub message_ts: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButtonPayload {
    pub action_id: String,
    pub flow_id: Uuid,
    #[serde(default)]
    pub invitee_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPayload {
    pub flow_id: Uuid,
    pub selected: Vec<MessageRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Mention(MentionPayload),
    Dm(DmPayload),
    Button(ButtonPayload),
    Selection(SelectionPayload),
}

impl Payload {
    pub fn flow_id(&self) -> Option<Uuid> {
        match self {
            Payload::Button(b) => Some(b.flow_id),
            Payload::Selection(s) => Some(s.flow_id),
            _ => None,
        }
    }
}

impl ChatEvent {
    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let event: ChatEvent = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        event.payload()?;
        Ok(event)
    }

    pub fn payload(&self) -> Result<Payload, String> {
        if self.channel_id.is_empty() || self.user_id.is_empty() {
            return Err("channel_id and user_id must be non-empty".into());
        }
        let raw = self.payload.clone();
        let typed = match self.kind {
            EventKind::Mention => serde_json::from_value(raw).map(Payload::Mention),
            EventKind::Dm => serde_json::from_value(raw).map(Payload::Dm),
            EventKind::Button => serde_json::from_value(raw).map(Payload::Button),
            EventKind::Selection => serde_json::from_value(raw).map(Payload::Selection),
        };
        typed.map_err(|e| format!("invalid {:?} payload: {e}", self.kind))
    }

    /// The chat message carried by a mention or dm.
    pub fn message(&self) -> Option<SourceMessage> {
        let (text, ts) = match self.payload().ok()? {
            Payload::Mention(m) => (m.text, m.message_ts),
            Payload::Dm(d) => (d.text, d.message_ts),
            _ => return None,
        };
        Some(SourceMessage {
            channel_id: self.channel_id.clone(),
            author_id: self.user_id.clone(),
            timestamp: ts,
            text,
        })
    }
}
