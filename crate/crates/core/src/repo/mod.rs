//! Versioned markdown store backed by a local git repository.
//!
//! Approved edits become commits whose messages carry the originating
//! conversation (see [`codec`]); [`RepositoryHandle::history`] reads that
//! context back. Git is driven through the `git` executable.

pub mod codec;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub use codec::{CodecError, CommitKind};

use crate::text::normalize_content;

/// 40-hex commit hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Revision(String);

impl Revision {
    pub fn new(hash: impl Into<String>) -> Self {
        Self(hash.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(8)]
    }
}

impl fmt::Display for Revision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentFile {
    pub path: String,
    pub content: String,
    /// Absent for documents that do not exist yet.
    pub revision: Option<Revision>,
}

impl DocumentFile {
    pub fn blank(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            content: String::new(),
            revision: None,
        }
    }
}

/// One chat message, as selected by a user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceMessage {
    pub channel_id: String,
    pub author_id: String,
    pub timestamp: String,
    pub text: String,
}

impl SourceMessage {
    pub fn is_valid(&self) -> bool {
        !(self.channel_id.is_empty()
            || self.author_id.is_empty()
            || self.timestamp.is_empty()
            || self.text.is_empty())
    }

    /// `(channel_id, timestamp)` identifies a message within a workspace.
    pub fn key(&self) -> (&str, &str) {
        (&self.channel_id, &self.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub proposal_id: Uuid,
    pub requester_id: String,
    pub approver_id: String,
    pub messages: Vec<SourceMessage>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub revision: Revision,
    pub parent: Option<Revision>,
    pub author_time: i64,
    pub subject: String,
    pub paths_changed: Vec<String>,
    pub context: Option<ConversationContext>,
    /// Set when trailers were present but could not be decoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_error: Option<String>,
}

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("not a git repository: {0}")]
    NotARepository(PathBuf),
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("document not found: {0}")]
    DocumentNotFound(String),
    #[error("revision not found: {0}")]
    RevisionNotFound(String),
    #[error("invalid document path {path:?}: {reason}")]
    InvalidPath { path: String, reason: &'static str },
    #[error("document {path} changed since base revision {}", expected.as_ref().map(Revision::as_str).unwrap_or("<none>"))]
    StaleBase {
        path: String,
        expected: Option<Revision>,
        head: Option<Revision>,
    },
    #[error("edit leaves {0} unchanged")]
    EmptyEdit(String),
    #[error("document {0} is not valid UTF-8")]
    NotUtf8(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("git {command} failed: {stderr}")]
    Git { command: String, stderr: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Revision a proposal was computed against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpectedBase {
    /// Skip the staleness check.
    Any,
    /// The proposal was computed against `Some(rev)`, or against a
    /// repository without commits when `None`.
    At(Option<Revision>),
}

#[derive(Debug, Clone)]
pub struct CommitRequest {
    pub path: String,
    pub content: String,
    pub title: String,
    pub context: ConversationContext,
    pub expected_base: ExpectedBase,
    /// Author/committer time in UTC seconds; wall clock when absent.
    pub timestamp: Option<i64>,
}

const COMMIT_NAME: &str = "CHOIR";
const COMMIT_EMAIL: &str = "choir@localhost";

fn lock_registry() -> &'static Mutex<HashMap<PathBuf, Arc<RwLock<()>>>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<RwLock<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default)
}

/// Normalizes a repository-relative document path.
pub fn normalize_path(path: &str) -> Result<String, RepoError> {
    let invalid = |reason| RepoError::InvalidPath {
        path: path.to_string(),
        reason,
    };
    if path.starts_with('/') {
        return Err(invalid("absolute path"));
    }
    if path.contains(['\\', '\n', '\r', '\0']) {
        return Err(invalid("forbidden character"));
    }
    let mut parts = Vec::new();
    for part in path.split('/') {
        match part {
            "" | "." => continue,
            ".." => return Err(invalid("parent traversal")),
            p => parts.push(p),
        }
    }
    if parts.is_empty() {
        return Err(invalid("empty path"));
    }
    if parts[0] == ".git" {
        return Err(invalid("inside .git"));
    }
    let joined = parts.join("/");
    if !joined.ends_with(".md") {
        return Err(invalid("not a markdown file"));
    }
    Ok(joined)
}

/// Shareable handle to one repository root.
///
/// Mutations are serialized through a writer lock shared by every handle
/// opened on the same root within the process.
#[derive(Debug, Clone)]
pub struct RepositoryHandle {
    root: PathBuf,
    lock: Arc<RwLock<()>>,
}

impl RepositoryHandle {
    /// Opens an existing repository whose top level is `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        let root = root.as_ref();
        let root = match root.canonicalize() {
            Ok(p) => p,
            Err(e) if e.kind() == std::io::ErrorKind::PermissionDenied => {
                return Err(RepoError::PermissionDenied(root.to_path_buf()))
            }
            Err(_) => return Err(RepoError::NotARepository(root.to_path_buf())),
        };
        if let Err(e) = std::fs::read_dir(&root) {
            return Err(match e.kind() {
                std::io::ErrorKind::PermissionDenied => RepoError::PermissionDenied(root),
                _ => RepoError::NotARepository(root),
            });
        }
        let out = Command::new("git")
            .arg("-C")
            .arg(&root)
            .args(["rev-parse", "--show-toplevel"])
            .stderr(Stdio::null())
            .output()?;
        if !out.status.success() {
            return Err(RepoError::NotARepository(root));
        }
        let top = PathBuf::from(String::from_utf8_lossy(&out.stdout).trim());
        if top.canonicalize().ok().as_deref() != Some(root.as_path()) {
            return Err(RepoError::NotARepository(root));
        }
        let lock = lock_registry()
            .lock()
            .expect("lock registry poisoned")
            .entry(root.clone())
            .or_default()
            .clone();
        Ok(Self { root, lock })
    }

    /// Initializes a repository at `root` (creating the directory) and opens it.
    pub fn init(root: impl AsRef<Path>) -> Result<Self, RepoError> {
        let root = root.as_ref();
        std::fs::create_dir_all(root)?;
        let out = Command::new("git")
            .arg("-C")
            .arg(root)
            .args(["init", "-q"])
            .output()?;
        if !out.status.success() {
            return Err(RepoError::Git {
                command: "init".into(),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            });
        }
        Self::open(root)
    }

    pub fn open_or_init(root: impl AsRef<Path>, init: bool) -> Result<Self, RepoError> {
        match Self::open(root.as_ref()) {
            Err(RepoError::NotARepository(_)) if init => Self::init(root),
            other => other,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn git_command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.root)
            .args(["-c", "core.quotepath=off", "-c", "commit.gpgsign=false"])
            .args(args)
            .env("GIT_TERMINAL_PROMPT", "0");
        cmd
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>, RepoError> {
        let out = self.git_command(args).stdin(Stdio::null()).output()?;
        if out.status.success() {
            Ok(out.stdout)
        } else {
            Err(RepoError::Git {
                command: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            })
        }
    }

    fn run_ok(&self, args: &[&str]) -> Result<Option<Vec<u8>>, RepoError> {
        let out = self.git_command(args).stdin(Stdio::null()).output()?;
        Ok(out.status.success().then_some(out.stdout))
    }

    fn run_with_input(
        &self,
        args: &[&str],
        input: &[u8],
        env: &[(&str, String)],
    ) -> Result<Vec<u8>, RepoError> {
        let mut cmd = self.git_command(args);
        for (k, v) in env {
            cmd.env(k, v);
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(input)?;
        let out = child.wait_with_output()?;
        if out.status.success() {
            Ok(out.stdout)
        } else {
            Err(RepoError::Git {
                command: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            })
        }
    }

    fn read_guard(&self) -> std::sync::RwLockReadGuard<'_, ()> {
        self.lock.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Current HEAD, or `None` for a repository without commits.
    pub fn head(&self) -> Result<Option<Revision>, RepoError> {
        let _g = self.read_guard();
        self.head_unlocked()
    }

    fn head_unlocked(&self) -> Result<Option<Revision>, RepoError> {
        Ok(self
            .run_ok(&["rev-parse", "--verify", "--quiet", "HEAD^{commit}"])?
            .map(|out| Revision::new(String::from_utf8_lossy(&out).trim())))
    }

    fn resolve(&self, revision: &Revision) -> Result<Revision, RepoError> {
        let spec = format!("{}^{{commit}}", revision.as_str());
        self.run_ok(&["rev-parse", "--verify", "--quiet", &spec])?
            .map(|out| Revision::new(String::from_utf8_lossy(&out).trim()))
            .ok_or_else(|| RepoError::RevisionNotFound(revision.to_string()))
    }

    fn list_unlocked(&self, revision: &Revision) -> Result<Vec<String>, RepoError> {
        let out = self.run(&["ls-tree", "-r", "-z", "--name-only", revision.as_str()])?;
        let mut paths: Vec<String> = out
            .split(|b| *b == 0)
            .filter(|p| !p.is_empty())
            .map(|p| String::from_utf8_lossy(p).into_owned())
            .filter(|p| p.ends_with(".md"))
            .collect();
        paths.sort();
        Ok(paths)
    }

    /// Tracked markdown paths at HEAD, sorted.
    pub fn list_documents(&self) -> Result<Vec<String>, RepoError> {
        let _g = self.read_guard();
        match self.head_unlocked()? {
            Some(head) => self.list_unlocked(&head),
            None => Ok(Vec::new()),
        }
    }

    fn blob_unlocked(&self, revision: &Revision, path: &str) -> Result<Option<String>, RepoError> {
        let spec = format!("{}:{path}", revision.as_str());
        match self.run_ok(&["cat-file", "blob", &spec])? {
            Some(bytes) => String::from_utf8(bytes)
                .map(|s| Some(normalize_content(&s)))
                .map_err(|_| RepoError::NotUtf8(path.to_string())),
            None => Ok(None),
        }
    }

    /// Reads a document at `revision` (HEAD when `None`).
    pub fn read_document(
        &self,
        path: &str,
        revision: Option<&Revision>,
    ) -> Result<DocumentFile, RepoError> {
        let path = normalize_path(path)?;
        let _g = self.read_guard();
        let rev = match revision {
            Some(r) => self.resolve(r)?,
            None => self
                .head_unlocked()?
                .ok_or_else(|| RepoError::DocumentNotFound(path.clone()))?,
        };
        let content = self
            .blob_unlocked(&rev, &path)?
            .ok_or_else(|| RepoError::DocumentNotFound(path.clone()))?;
        Ok(DocumentFile {
            path,
            content,
            revision: Some(rev),
        })
    }

    /// Every markdown document at HEAD, read under one lock.
    pub fn snapshot(&self) -> Result<(Option<Revision>, Vec<DocumentFile>), RepoError> {
        let _g = self.read_guard();
        let Some(head) = self.head_unlocked()? else {
            return Ok((None, Vec::new()));
        };
        let mut docs = Vec::new();
        for path in self.list_unlocked(&head)? {
            if let Some(content) = self.blob_unlocked(&head, &path)? {
                docs.push(DocumentFile {
                    path,
                    content,
                    revision: Some(head.clone()),
                });
            }
        }
        Ok((Some(head), docs))
    }

    /// Applies `request` as exactly one commit and returns the new HEAD.
    pub fn commit_update(&self, request: &CommitRequest) -> Result<Revision, RepoError> {
        let path = normalize_path(&request.path)?;
        let _g = self.lock.write().unwrap_or_else(|e| e.into_inner());

        let head = self.head_unlocked()?;
        let current = match &head {
            Some(h) => self.blob_unlocked(h, &path)?,
            None => None,
        };

        if let ExpectedBase::At(expected) = &request.expected_base {
            let base_content = match expected {
                Some(rev) => {
                    let rev = self.resolve(rev)?;
                    self.blob_unlocked(&rev, &path)?
                }
                None => None,
            };
            if base_content != current {
                return Err(RepoError::StaleBase {
                    path,
                    expected: expected.clone(),
                    head,
                });
            }
        }

        let content = normalize_content(&request.content);
        if current.as_deref() == Some(content.as_str()) || (current.is_none() && content.is_empty())
        {
            return Err(RepoError::EmptyEdit(path));
        }

        let kind = if current.is_some() {
            CommitKind::Update
        } else {
            CommitKind::Create
        };
        let message = codec::commit_message(kind, &path, &request.title, &request.context)?;

        let file = self.root.join(&path);
        if let Some(dir) = file.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&file, content.as_bytes())?;
        self.run(&["add", "--", &path])?;

        let mut env = vec![
            ("GIT_AUTHOR_NAME", COMMIT_NAME.to_string()),
            ("GIT_AUTHOR_EMAIL", COMMIT_EMAIL.to_string()),
            ("GIT_COMMITTER_NAME", COMMIT_NAME.to_string()),
            ("GIT_COMMITTER_EMAIL", COMMIT_EMAIL.to_string()),
        ];
        if let Some(ts) = request.timestamp {
            let date = format!("{ts} +0000");
            env.push(("GIT_AUTHOR_DATE", date.clone()));
            env.push(("GIT_COMMITTER_DATE", date));
        }
        self.run_with_input(
            &[
                "commit",
                "-q",
                "--no-verify",
                "--cleanup=verbatim",
                "-F",
                "-",
                "--",
                &path,
            ],
            message.as_bytes(),
            &env,
        )?;
        self.head_unlocked()?.ok_or_else(|| RepoError::Git {
            command: "commit".into(),
            stderr: "HEAD missing after commit".into(),
        })
    }

    /// Raw commit message of `revision`, byte for byte.
    pub fn commit_message(&self, revision: &Revision) -> Result<String, RepoError> {
        let _g = self.read_guard();
        Ok(self.parse_commit(revision)?.message)
    }

    fn parse_commit(&self, revision: &Revision) -> Result<RawCommit, RepoError> {
        let raw = self.run(&["cat-file", "commit", revision.as_str()])?;
        let raw = String::from_utf8_lossy(&raw).into_owned();
        let (header, message) = raw.split_once("\n\n").unwrap_or((raw.as_str(), ""));
        let mut parent = None;
        let mut author_time = 0;
        for line in header.lines() {
            if let Some(p) = line.strip_prefix("parent ") {
                parent.get_or_insert_with(|| Revision::new(p.trim()));
            } else if let Some(a) = line.strip_prefix("author ") {
                // "<name> <email> <unix> <tz>"
                let mut fields = a.rsplitn(3, ' ');
                let _tz = fields.next();
                author_time = fields.next().and_then(|t| t.parse().ok()).unwrap_or(0);
            }
        }
        Ok(RawCommit {
            parent,
            author_time,
            message: message.to_string(),
        })
    }

    /// Revision records touching `path`, newest first along first-parent history.
    pub fn history(&self, path: &str) -> Result<Vec<RevisionRecord>, RepoError> {
        let path = normalize_path(path)?;
        let _g = self.read_guard();
        if self.head_unlocked()?.is_none() {
            return Err(RepoError::DocumentNotFound(path));
        }
        let out = self.run(&["rev-list", "--first-parent", "HEAD", "--", &path])?;
        let revisions: Vec<Revision> = String::from_utf8_lossy(&out)
            .lines()
            .filter(|l| !l.is_empty())
            .map(Revision::new)
            .collect();
        if revisions.is_empty() {
            return Err(RepoError::DocumentNotFound(path));
        }

        let mut records = Vec::with_capacity(revisions.len());
        for revision in revisions {
            let raw = self.parse_commit(&revision)?;
            let changed = match &raw.parent {
                Some(p) => self.run(&[
                    "diff-tree",
                    "-r",
                    "-z",
                    "--name-only",
                    p.as_str(),
                    revision.as_str(),
                ])?,
                None => self.run(&[
                    "diff-tree",
                    "--root",
                    "--no-commit-id",
                    "-r",
                    "-z",
                    "--name-only",
                    revision.as_str(),
                ])?,
            };
            let paths_changed = changed
                .split(|b| *b == 0)
                .filter(|p| !p.is_empty())
                .map(|p| String::from_utf8_lossy(p).into_owned())
                .collect();
            let (context, context_error) = match codec::decode_context(&raw.message) {
                Ok(ctx) => (ctx, None),
                Err(e) => {
                    tracing::warn!(revision = %revision, error = %e, "undecodable context trailer");
                    (None, Some(e.to_string()))
                }
            };
            records.push(RevisionRecord {
                subject: raw.message.lines().next().unwrap_or_default().to_string(),
                revision,
                parent: raw.parent,
                author_time: raw.author_time,
                paths_changed,
                context,
                context_error,
            });
        }
        Ok(records)
    }

    /// True when some commit touching `path` carries `proposal_id`.
    pub fn find_applied(&self, path: &str, proposal_id: Uuid) -> Result<Option<Revision>, RepoError> {
        match self.history(path) {
            Ok(records) => Ok(records
                .into_iter()
                .find(|r| r.context.as_ref().map(|c| c.proposal_id) == Some(proposal_id))
                .map(|r| r.revision)),
            Err(RepoError::DocumentNotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

struct RawCommit {
    parent: Option<Revision>,
    author_time: i64,
    message: String,
}
