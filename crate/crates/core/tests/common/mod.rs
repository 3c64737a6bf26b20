#![allow(dead_code)]

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use choir_core::assistant::Assistant;
use choir_core::gateway::{ChatEvent, EventKind, Service};
use choir_core::index::{HashedEmbedder, IndexConfig, KnowledgeIndex};
use choir_core::repo::{
    CommitRequest, ConversationContext, ExpectedBase, RepositoryHandle, SourceMessage,
};
use choir_core::workflow::{MessageRef, Workflow, WorkflowConfig};
use choir_core::Uuid;
use serde_json::json;
use tempfile::TempDir;

pub const POLICY_PATH: &str = "echolabs-policy.md";

pub const POLICY: &str = "# Echo Lab Policy

## Paper and Talk Writing

* We aim for a go/no-go decision three months before the paper is due.
* Writing takes an immense amount of time.

## Lab Meetings

* Weekly meetings are held on Mondays.
";

pub const ONBOARDING: &str = "# Onboarding

## Accounts

* New students request cluster accounts from the lab admin.
* Badge access to the building takes one week.

## Equipment

* Laptops are returned to the equipment closet at graduation.
";

pub const READING_GROUP: &str = "# Reading Group

* The reading group meets Thursdays at noon.
* Each member presents one article per semester.
";

pub const WORKSPACE: &str = "W_ECHO";
pub const CHANNEL: &str = "C_GENERAL";
pub const MANAGER: &str = "U_LEE";
pub const REQUESTER: &str = "U_ADNAN";
pub const CALEB: &str = "U_CALEB";
pub const ANDY: &str = "U_ANDY";
pub const QUESTIONER: &str = "U_SAM";

pub const MENTION_TEXT: &str =
    "@CHOIR We aim for a decision to submit a paper or not one month before the deadline.";

pub fn msg(channel: &str, author: &str, ts: &str, text: &str) -> SourceMessage {
    SourceMessage {
        channel_id: channel.into(),
        author_id: author.into(),
        timestamp: ts.into(),
        text: text.into(),
    }
}

/// The two messages before the mention in the channel.
pub fn deadline_prior() -> Vec<SourceMessage> {
    vec![
        msg(CHANNEL, CALEB, "1700000001.000100", "True. How about deciding whether to submit or not a month ahead?"),
        msg(CHANNEL, REQUESTER, "1700000002.000200", "Yeah, that sounds safer."),
    ]
}

pub fn deadline_mention() -> SourceMessage {
    msg(CHANNEL, REQUESTER, "1700000003.000300", MENTION_TEXT)
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()
}

pub fn git(root: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(args)
        .output()
        .expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// A commit made outside the service, as a person editing the file would.
pub fn manual_commit(root: &Path, path: &str, content: &str, unix: i64) {
    let file = root.join(path);
    if let Some(dir) = file.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    std::fs::write(&file, content).unwrap();
    git(root, &["add", "--", path]);
    let date = format!("{unix} +0000");
    let out = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(["commit", "-q", "--no-verify", "-m", &format!("Edit {path} by hand")])
        .env("GIT_AUTHOR_NAME", "Lab Member")
        .env("GIT_AUTHOR_EMAIL", "member@example.org")
        .env("GIT_COMMITTER_NAME", "Lab Member")
        .env("GIT_COMMITTER_EMAIL", "member@example.org")
        .env("GIT_AUTHOR_DATE", &date)
        .env("GIT_COMMITTER_DATE", &date)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

pub fn commit_count(root: &Path) -> usize {
    if git(root, &["rev-parse", "--verify", "-q", "HEAD"]).is_empty() {
        return 0;
    }
    git(root, &["rev-list", "--count", "HEAD"]).trim().parse().unwrap()
}

pub fn head_of(root: &Path) -> String {
    git(root, &["rev-parse", "HEAD"]).trim().to_string()
}

/// Seeded lab repository: three hand-written documents and one earlier
/// approved change whose context records a Questioner/Manager exchange.
/// All dates are fixed, so two fixtures have identical revision hashes.
pub fn fixture_repo() -> (TempDir, RepositoryHandle) {
    let dir = tempfile::tempdir().unwrap();
    let repo = RepositoryHandle::init(dir.path()).unwrap();
    let root = repo.root().to_path_buf();
    manual_commit(&root, POLICY_PATH, &POLICY.replace("\n* Writing takes an immense amount of time.", ""), 1_690_000_000);
    manual_commit(&root, "onboarding.md", ONBOARDING, 1_690_000_100);
    manual_commit(&root, "reading-group.md", READING_GROUP, 1_690_000_200);
    repo.commit_update(&CommitRequest {
        path: POLICY_PATH.into(),
        content: POLICY.into(),
        title: "Note how long writing takes".into(),
        context: ConversationContext {
            proposal_id: Uuid::from_u128(0xfeed),
            requester_id: QUESTIONER.into(),
            approver_id: MANAGER.into(),
            messages: vec![
                msg("D_PRIOR", QUESTIONER, "1690000250.000100", "Why do we decide so early about submitting?"),
                msg("D_PRIOR", MANAGER, "1690000260.000100", "Writing takes an immense amount of time, so we commit early."),
            ],
            summary: Some("Explains the early go/no-go decision.".into()),
        },
        expected_base: ExpectedBase::Any,
        timestamp: Some(1_690_000_300),
    })
    .unwrap();
    (dir, repo)
}

pub fn empty_repo() -> (TempDir, RepositoryHandle) {
    let dir = tempfile::tempdir().unwrap();
    let repo = RepositoryHandle::init(dir.path()).unwrap();
    (dir, repo)
}

pub fn workflow_config(managers: &[&str]) -> WorkflowConfig {
    WorkflowConfig {
        managers: managers.iter().map(|m| m.to_string()).collect(),
        background_rebuild: false,
        ..WorkflowConfig::default()
    }
}

pub fn workflow_with(repo: &RepositoryHandle, config: WorkflowConfig, assistant: Assistant) -> Workflow {
    let index = Arc::new(KnowledgeIndex::new(Arc::new(HashedEmbedder::default()), IndexConfig::default()));
    index.rebuild(repo).unwrap();
    Workflow::new(config, repo.clone(), index, assistant)
}

pub fn workflow(repo: &RepositoryHandle) -> Workflow {
    workflow_with(repo, workflow_config(&[MANAGER]), Assistant::scripted())
}

pub fn service(repo: &RepositoryHandle, journal: Option<&Path>) -> Service {
    Service::new(workflow(repo), journal, Some(WORKSPACE.into())).unwrap()
}

/// Builds events with ids and timestamps derived from a counter.
pub struct Events {
    next: u128,
}

impl Events {
    pub fn new() -> Self {
        Self { next: 1 }
    }

    /// Continues a sequence as if `n` events had been built already.
    pub fn starting_at(n: u128) -> Self {
        Self { next: n + 1 }
    }

    fn build(&mut self, kind: EventKind, channel: &str, user: &str, payload: serde_json::Value) -> ChatEvent {
        let n = self.next;
        self.next += 1;
        ChatEvent {
            event_id: Uuid::from_u128(0xe000_0000 + n),
            workspace_id: WORKSPACE.into(),
            kind,
            channel_id: channel.into(),
            user_id: user.into(),
            payload,
            ts: epoch() + Duration::minutes(n as i64),
        }
    }

    pub fn mention(&mut self, channel: &str, user: &str, message: &SourceMessage, recent: &[SourceMessage]) -> ChatEvent {
        self.build(
            EventKind::Mention,
            channel,
            user,
            json!({"text": message.text, "message_ts": message.timestamp, "recent_messages": recent}),
        )
    }

    pub fn dm(&mut self, channel: &str, user: &str, ts: &str, text: &str) -> ChatEvent {
        self.build(EventKind::Dm, channel, user, json!({"text": text, "message_ts": ts}))
    }

    pub fn button(&mut self, channel: &str, user: &str, action: &str, flow: Uuid) -> ChatEvent {
        self.build(EventKind::Button, channel, user, json!({"action_id": action, "flow_id": flow}))
    }

    pub fn invite(&mut self, channel: &str, user: &str, flow: Uuid, invitee: &str) -> ChatEvent {
        self.build(
            EventKind::Button,
            channel,
            user,
            json!({"action_id": "invite", "flow_id": flow, "invitee_id": invitee}),
        )
    }

    pub fn select(&mut self, channel: &str, user: &str, flow: Uuid, messages: &[SourceMessage]) -> ChatEvent {
        let refs: Vec<MessageRef> = messages.iter().map(MessageRef::from).collect();
        self.build(EventKind::Selection, channel, user, json!({"flow_id": flow, "selected": refs}))
    }
}
