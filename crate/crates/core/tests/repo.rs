mod common;

use std::sync::{Arc, Barrier};

use base64::Engine;
use choir_core::repo::{
    CommitRequest, ConversationContext, ExpectedBase, RepoError, RepositoryHandle, Revision,
    SourceMessage,
};
use choir_core::Uuid;
use common::*;

fn context(n: usize) -> ConversationContext {
    let mut messages = deadline_prior();
    messages.push(deadline_mention());
    ConversationContext {
        proposal_id: Uuid::from_u128(0xabc0 + n as u128),
        requester_id: REQUESTER.into(),
        approver_id: MANAGER.into(),
        messages,
        summary: Some("+3/\u{2212}0 lines in Paper and Talk Writing".into()),
    }
}

fn request(path: &str, content: &str, base: ExpectedBase, n: usize) -> CommitRequest {
    CommitRequest {
        path: path.into(),
        content: content.into(),
        title: format!("Change number {n}"),
        context: context(n),
        expected_base: base,
        timestamp: Some(1_700_000_000 + n as i64),
    }
}

#[test]
fn open_requires_a_repository() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(RepositoryHandle::open(dir.path()), Err(RepoError::NotARepository(_))));
    let repo = RepositoryHandle::open_or_init(dir.path(), true).unwrap();
    assert!(repo.list_documents().unwrap().is_empty());
    assert!(repo.head().unwrap().is_none());
    assert!(RepositoryHandle::open(dir.path()).is_ok());
}

#[test]
fn only_markdown_is_listed() {
    let (_d, repo) = empty_repo();
    manual_commit(repo.root(), "a.md", "# A\n", 1_600_000_001);
    manual_commit(repo.root(), "b.txt", "b\n", 1_600_000_002);
    manual_commit(repo.root(), "notes/c.md", "# C\n", 1_600_000_003);
    assert_eq!(repo.list_documents().unwrap(), vec!["a.md", "notes/c.md"]);
}

#[test]
fn read_at_head_and_older_revision() {
    let (_d, repo) = fixture_repo();
    let shadow = repo.read_document(POLICY_PATH, None).unwrap();
    let edited = format!("{POLICY}* Posters count as talks.\n");
    let rev = repo
        .commit_update(&request(POLICY_PATH, &edited, ExpectedBase::At(shadow.revision.clone()), 1))
        .unwrap();
    let now = repo.read_document(POLICY_PATH, None).unwrap();
    assert_eq!(now.content, edited);
    assert_eq!(now.revision.as_ref(), Some(&rev));
    let then = repo.read_document(POLICY_PATH, shadow.revision.as_ref()).unwrap();
    assert_eq!(then.content, shadow.content);

    assert!(matches!(repo.read_document("absent.md", None), Err(RepoError::DocumentNotFound(_))));
    let bogus = Revision::new("0".repeat(40));
    assert!(matches!(
        repo.read_document(POLICY_PATH, Some(&bogus)),
        Err(RepoError::RevisionNotFound(_))
    ));
    assert!(matches!(repo.read_document("../etc/passwd.md", None), Err(RepoError::InvalidPath { .. })));
}

#[test]
fn line_endings_are_normalized() {
    let (_d, repo) = empty_repo();
    repo.commit_update(&request("crlf.md", "# T\r\n\r\nline\r\n\r\n\r\n", ExpectedBase::Any, 1))
        .unwrap();
    let raw = std::fs::read(repo.root().join("crlf.md")).unwrap();
    assert_eq!(raw, b"# T\n\nline\n");
    let err = repo.commit_update(&request("crlf.md", "# T\n\nline", ExpectedBase::Any, 2)).unwrap_err();
    assert!(matches!(err, RepoError::EmptyEdit(_)));
}

/// Parses a raw commit message without the library's codec.
fn parse_raw(message: &str) -> (String, String, Vec<(String, String)>) {
    let mut paragraphs = message.split("\n\n");
    let subject = paragraphs.next().unwrap().to_string();
    let title = paragraphs.next().unwrap().to_string();
    let trailers = paragraphs
        .next()
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(": ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    (subject, title, trailers)
}

fn quoted(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

/// `{messages:[{channel_id,author_id,timestamp,text}],summary}` in that key
/// order with no whitespace.
fn canonical_json(ctx: &ConversationContext) -> String {
    let messages: Vec<String> = ctx
        .messages
        .iter()
        .map(|m| {
            format!(
                "{{\"channel_id\":{},\"author_id\":{},\"timestamp\":{},\"text\":{}}}",
                quoted(&m.channel_id),
                quoted(&m.author_id),
                quoted(&m.timestamp),
                quoted(&m.text)
            )
        })
        .collect();
    let summary = ctx.summary.as_deref().map_or("null".to_string(), quoted);
    format!("{{\"messages\":[{}],\"summary\":{summary}}}", messages.join(","))
}

#[test]
fn commit_message_matches_git_log_oracle() {
    let (_d, repo) = fixture_repo();
    let base = repo.read_document(POLICY_PATH, None).unwrap().revision;
    let content = format!("{POLICY}* Decide one month before the deadline.\n");
    let ctx = context(7);
    let rev = repo
        .commit_update(&request(POLICY_PATH, &content, ExpectedBase::At(base), 7))
        .unwrap();

    let raw = git(repo.root(), &["log", "-1", "--format=%B", rev.as_str()]);
    // `%B` appends one newline after the message body.
    let message = raw.strip_suffix('\n').unwrap();
    assert_eq!(message, repo.commit_message(&rev).unwrap());

    let canonical = canonical_json(&ctx);
    let expected = format!(
        "choir: update {POLICY_PATH}\n\nChange number 7\n\nChoir-Proposal-Id: {}\nChoir-Requester: {REQUESTER}\nChoir-Approver: {MANAGER}\nChoir-Context: {}\n",
        ctx.proposal_id,
        base64::engine::general_purpose::STANDARD.encode(canonical.as_bytes())
    );
    assert_eq!(message, expected);

    let (subject, title, trailers) = parse_raw(message);
    assert_eq!(subject, format!("choir: update {POLICY_PATH}"));
    assert_eq!(title, "Change number 7");
    let b64 = &trailers.iter().find(|(k, _)| k == "Choir-Context").unwrap().1;
    let decoded: serde_json::Value =
        serde_json::from_slice(&base64::engine::general_purpose::STANDARD.decode(b64).unwrap()).unwrap();
    let messages: Vec<SourceMessage> = serde_json::from_value(decoded["messages"].clone()).unwrap();
    assert_eq!(messages, ctx.messages);
    assert_eq!(decoded["summary"].as_str(), ctx.summary.as_deref());

    let record = &repo.history(POLICY_PATH).unwrap()[0];
    assert_eq!(record.revision, rev);
    assert_eq!(record.context.as_ref(), Some(&ctx));
    assert_eq!(record.paths_changed, vec![POLICY_PATH]);
    assert_eq!(record.author_time, 1_700_000_007);
}

#[test]
fn new_document_uses_create_subject() {
    let (_d, repo) = fixture_repo();
    let rev = repo
        .commit_update(&request("travel.md", "# Travel\n", ExpectedBase::At(repo.head().unwrap()), 1))
        .unwrap();
    assert!(repo.commit_message(&rev).unwrap().starts_with("choir: create travel.md\n\n"));
}

#[test]
fn history_mixes_choir_and_manual_commits() {
    let (_d, repo) = empty_repo();
    let rev = repo.commit_update(&request("a.md", "# A\n", ExpectedBase::Any, 1)).unwrap();
    assert_eq!(repo.history("a.md").unwrap().len(), 1);
    manual_commit(repo.root(), "a.md", "# A\n\nedited by hand\n", 1_700_000_500);
    let h = repo.history("a.md").unwrap();
    assert_eq!(h.len(), 2);
    assert!(h[0].context.is_none());
    assert_eq!(h[1].revision, rev);
    assert_eq!(h[1].context.as_ref(), Some(&context(1)));
    assert_eq!(h[0].parent.as_ref(), Some(&rev));
    assert!(matches!(repo.history("never.md"), Err(RepoError::DocumentNotFound(_))));
}

#[test]
fn foreign_and_malformed_commits_do_not_break_history() {
    let (_d, repo) = empty_repo();
    let mut expected = Vec::new();
    for n in 0..4 {
        let content = format!("# A\n\nchoir {n}\n");
        expected.push(repo.commit_update(&request("a.md", &content, ExpectedBase::Any, n)).unwrap());
        manual_commit(repo.root(), "a.md", &format!("# A\n\nmanual {n}\n"), 1_700_001_000 + n as i64);
    }
    // A hand-written message that looks like ours but carries a broken payload.
    std::fs::write(repo.root().join("a.md"), "# A\n\nbroken\n").unwrap();
    git(repo.root(), &["add", "a.md"]);
    git(
        repo.root(),
        &[
            "-c", "user.name=x", "-c", "user.email=x@y",
            "commit", "-q", "-m",
            "choir: update a.md\n\nbad\n\nChoir-Proposal-Id: not-a-uuid\nChoir-Requester: a\nChoir-Approver: b\nChoir-Context: ???\n",
        ],
    );
    let h = repo.history("a.md").unwrap();
    assert_eq!(h.len(), 9);
    assert!(h[0].context.is_none() && h[0].context_error.is_some());
    let with_ctx: Vec<&Revision> = h.iter().filter(|r| r.context.is_some()).map(|r| &r.revision).collect();
    let mut newest_first = expected.clone();
    newest_first.reverse();
    assert_eq!(with_ctx, newest_first.iter().collect::<Vec<_>>());
    assert_eq!(repo.find_applied("a.md", Uuid::from_u128(0xabc0 + 2)).unwrap(), Some(expected[2].clone()));
    assert_eq!(repo.find_applied("a.md", Uuid::from_u128(1)).unwrap(), None);
}

#[test]
fn stale_base_detected() {
    let (_d, repo) = fixture_repo();
    let base = repo.read_document(POLICY_PATH, None).unwrap().revision;
    manual_commit(repo.root(), POLICY_PATH, "# Echo Lab Policy\n\nrewritten\n", 1_700_000_000);
    let err = repo
        .commit_update(&request(POLICY_PATH, "# new\n", ExpectedBase::At(base.clone()), 1))
        .unwrap_err();
    assert!(matches!(err, RepoError::StaleBase { .. }), "{err:?}");
    // Changes to other files do not make the base stale.
    let head = repo.head().unwrap();
    manual_commit(repo.root(), "other.md", "# O\n", 1_700_000_100);
    repo.commit_update(&request(POLICY_PATH, "# new\n", ExpectedBase::At(head), 2)).unwrap();
}

#[test]
fn concurrent_writers_never_lose_an_update() {
    let (_d, repo) = fixture_repo();
    let base = repo.head().unwrap();
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = (0..2)
        .map(|n| {
            // Separate handles on the same root share one writer lock.
            let repo = RepositoryHandle::open(repo.root()).unwrap();
            let base = base.clone();
            let barrier = barrier.clone();
            std::thread::spawn(move || {
                let content = format!("{POLICY}* writer {n}\n");
                barrier.wait();
                (n, repo.commit_update(&request(POLICY_PATH, &content, ExpectedBase::At(base), n)))
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let winners: Vec<usize> = results.iter().filter(|(_, r)| r.is_ok()).map(|(n, _)| *n).collect();
    assert_eq!(winners.len(), 1, "{results:?}");
    let loser = results.iter().find(|(_, r)| r.is_err()).unwrap();
    assert!(matches!(loser.1, Err(RepoError::StaleBase { .. })));
    let content = repo.read_document(POLICY_PATH, None).unwrap().content;
    assert!(content.ends_with(&format!("* writer {}\n", winners[0])));
    assert_eq!(commit_count(repo.root()), 5);
}
