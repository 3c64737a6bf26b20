//! Deterministic stand-in for a language model.

use serde::{Deserialize, Serialize};

use super::{AssistantError, DiffOp, EditDiff, Provider, ProviderRequest, ProviderResponse};
use crate::index::segment::{atx_heading, segment_document};
use crate::index::{Embedder, HashedEmbedder};
use crate::repo::{DocumentFile, RevisionRecord, SourceMessage};
use crate::text::{normalize_content, slugify, truncate_chars};

pub const NO_SOURCE_ANSWER: &str =
    "I could not find anything about this in the repository documents.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "content")]
pub enum EditRule {
    /// Append each message as a `* ` bullet at the end of the section whose
    /// text is most similar to the messages.
    AppendBullets,
    /// Return the document unchanged.
    EchoDocument,
    /// Return fixed content.
    Replace(String),
}

#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    pub edit_rule: EditRule,
    /// Every call fails with `ProviderUnavailable` when set.
    pub unavailable: bool,
    embedder: HashedEmbedder,
}

impl Default for ScriptedProvider {
    fn default() -> Self {
        Self::new(EditRule::AppendBullets)
    }
}

impl ScriptedProvider {
    pub fn new(edit_rule: EditRule) -> Self {
        Self {
            edit_rule,
            unavailable: false,
            embedder: HashedEmbedder::default(),
        }
    }

    pub fn unavailable() -> Self {
        Self {
            unavailable: true,
            ..Self::default()
        }
    }
}

/// Message text with leading `@mention` tokens removed and line breaks folded.
pub fn message_body(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let start = words
        .iter()
        .position(|w| !(w.starts_with('@') || w.starts_with("<@")))
        .unwrap_or(words.len());
    words[start..].join(" ")
}

fn bullets(messages: &[SourceMessage]) -> String {
    messages
        .iter()
        .map(|m| message_body(&m.text))
        .filter(|b| !b.is_empty())
        .map(|b| format!("* {b}\n"))
        .collect()
}

fn title_case_slug(slug: &str) -> String {
    slug.split('-')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(first) => first.to_uppercase().chain(cs).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl ScriptedProvider {
    fn append_bullets(&self, document: &DocumentFile, messages: &[SourceMessage]) -> ProviderResponse {
        let content = normalize_content(&document.content);
        let added = bullets(messages);
        let count = added.lines().count();

        if content.is_empty() {
            let stem = document.path.trim_end_matches(".md");
            let stem = stem.rsplit('/').next().unwrap_or(stem);
            let heading = title_case_slug(&slugify(stem, 12));
            let heading = if heading.is_empty() { "Notes".to_string() } else { heading };
            return ProviderResponse {
                text: format!("# {heading}\n\n{added}"),
                title: Some(format!("Create {} with {count} note(s)", document.path)),
                cited_chunks: None,
            };
        }

        // Whole sections, never length-split.
        let sections = segment_document(&document.path, &content, usize::MAX);
        let query = messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let query = self.embedder.embed(&query).expect("hashed embedder is infallible");

        let mut best: Option<(usize, f64)> = None;
        for (i, s) in sections.iter().enumerate() {
            if s.heading_path.is_empty() && sections.len() > 1 {
                continue;
            }
            let score = query.dot(&self.embedder.embed(&s.text).expect("infallible"));
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let target = best.map(|(i, _)| i).unwrap_or(sections.len() - 1);

        let mut out = String::with_capacity(content.len() + added.len());
        for (i, s) in sections.iter().enumerate() {
            if i != target {
                out.push_str(&s.text);
                continue;
            }
            let body = s.text.trim_end_matches('\n');
            let trailing = &s.text[body.len()..];
            out.push_str(body);
            out.push('\n');
            out.push_str(&added);
            // Keep the blank lines that separated this section from the next.
            out.push_str(&trailing[1.min(trailing.len())..]);
        }

        let heading = sections[target]
            .heading_path
            .last()
            .cloned()
            .unwrap_or_else(|| "the document".to_string());
        ProviderResponse {
            text: out,
            title: Some(format!("Add {count} note(s) under {heading}")),
            cited_chunks: None,
        }
    }
}

/// `Context from <k> prior revision(s):` followed by one line per record
/// with context, in the order given (newest first).
pub fn context_template(records: &[RevisionRecord]) -> String {
    let with_context: Vec<&RevisionRecord> = records.iter().filter(|r| r.context.is_some()).collect();
    if with_context.is_empty() {
        return super::NO_CONTEXT_SUMMARY.to_string();
    }
    let mut out = format!("Context from {} prior revision(s):", with_context.len());
    for record in with_context {
        let ctx = record.context.as_ref().expect("filtered");
        let first = ctx
            .messages
            .first()
            .map(|m| m.text.split_whitespace().collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        out.push_str(&format!(
            "\n- {} by {}, approved by {}: \"{}\"",
            record.revision.short(),
            ctx.requester_id,
            ctx.approver_id,
            truncate_chars(&first, 80)
        ));
    }
    out
}

/// Innermost heading title for every line of `content`.
fn line_sections(content: &str) -> Vec<Option<String>> {
    let mut current = None;
    content
        .split_inclusive('\n')
        .map(|line| {
            if let Some((_, title)) = atx_heading(line) {
                current = Some(title);
            }
            current.clone()
        })
        .collect()
}

/// `+<inserted>/−<deleted> lines in <sections>`.
pub fn change_template(base: &str, proposed: &str, diff: &EditDiff) -> String {
    let base_sections = line_sections(base);
    let new_sections = line_sections(proposed);
    let mut touched: Vec<String> = Vec::new();
    let (mut base_line, mut new_line) = (0usize, 0usize);
    let mut note = |section: Option<&Option<String>>| {
        let name = section
            .cloned()
            .flatten()
            .unwrap_or_else(|| "document preamble".to_string());
        if !touched.contains(&name) {
            touched.push(name);
        }
    };
    for hunk in &diff.hunks {
        for _ in &hunk.lines {
            match hunk.op {
                DiffOp::Keep => {
                    base_line += 1;
                    new_line += 1;
                }
                DiffOp::Delete => {
                    note(base_sections.get(base_line));
                    base_line += 1;
                }
                DiffOp::Insert => {
                    note(new_sections.get(new_line));
                    new_line += 1;
                }
            }
        }
    }
    let sections = if touched.is_empty() {
        "no sections".to_string()
    } else {
        touched.join(", ")
    };
    format!(
        "+{}/\u{2212}{} lines in {sections}",
        diff.inserted_lines(),
        diff.deleted_lines()
    )
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, AssistantError> {
        if self.unavailable {
            return Err(AssistantError::ProviderUnavailable("scripted outage".into()));
        }
        Ok(match request {
            ProviderRequest::ProposeEdit { document, messages } => match &self.edit_rule {
                EditRule::AppendBullets => self.append_bullets(document, messages),
                EditRule::EchoDocument => ProviderResponse {
                    text: document.content.clone(),
                    ..Default::default()
                },
                EditRule::Replace(text) => ProviderResponse {
                    text: text.clone(),
                    ..Default::default()
                },
            },
            ProviderRequest::AnswerQuestion { chunks, .. } => match chunks.first() {
                Some(top) => ProviderResponse {
                    text: top.text.trim().to_string(),
                    title: None,
                    cited_chunks: Some(vec![top.chunk_id.clone()]),
                },
                None => ProviderResponse {
                    text: NO_SOURCE_ANSWER.to_string(),
                    title: None,
                    cited_chunks: Some(Vec::new()),
                },
            },
            ProviderRequest::SummarizeContext { records } => ProviderResponse {
                text: context_template(records),
                ..Default::default()
            },
            ProviderRequest::SummarizeChange {
                base,
                proposed,
                diff,
            } => ProviderResponse {
                text: change_template(base, proposed, diff),
                ..Default::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assistant::{diff_documents, Assistant};
    use crate::repo::{ConversationContext, Revision};
    use std::sync::Arc;
    use uuid::Uuid;

    const POLICY: &str = "# Echo Lab Policy\n\n## Paper and Talk Writing\n\n* We aim for a go/no-go decision three months before the paper is due.\n* Writing takes an immense amount of time.\n\n## Lab Meetings\n\n* Weekly meetings are held on Mondays.\n";

    fn msg(author: &str, ts: &str, text: &str) -> SourceMessage {
        SourceMessage {
            channel_id: "C_GENERAL".into(),
            author_id: author.into(),
            timestamp: ts.into(),
            text: text.into(),
        }
    }

    fn deadline_messages() -> Vec<SourceMessage> {
        vec![
            msg("U_CALEB", "1.000", "True. How about deciding whether to submit or not a month ahead?"),
            msg("U_ADNAN", "2.000", "Yeah, that sounds safer."),
            msg("U_ADNAN", "3.000", "@CHOIR We aim for a decision to submit a paper or not one month before the deadline."),
        ]
    }

    fn policy_doc() -> DocumentFile {
        DocumentFile {
            path: "echolabs-policy.md".into(),
            content: POLICY.into(),
            revision: Some(Revision::new("a".repeat(40))),
        }
    }

    #[test]
    fn bullets_land_in_matching_section() {
        let a = Assistant::scripted();
        let (content, title) = a.propose_edit(&policy_doc(), &deadline_messages()).unwrap();
        let paper = content.find("## Paper and Talk Writing").unwrap();
        let meetings = content.find("## Lab Meetings").unwrap();
        let added = content
            .find("* We aim for a decision to submit a paper or not one month before the deadline.")
            .unwrap();
        assert!(paper < added && added < meetings);
        assert!(!content.contains("@CHOIR"));
        assert_eq!(title, "Add 3 note(s) under Paper and Talk Writing");
        // Only insertions.
        let d = diff_documents(POLICY, &content);
        assert_eq!((d.inserted_lines(), d.deleted_lines()), (3, 0));
        assert!(content.contains("Writing takes an immense amount of time.\n* True."));
        assert!(content.contains("deadline.\n\n## Lab Meetings"));
    }

    #[test]
    fn scripted_outputs_are_deterministic() {
        let a = Assistant::scripted();
        assert_eq!(
            a.propose_edit(&policy_doc(), &deadline_messages()).unwrap(),
            a.propose_edit(&policy_doc(), &deadline_messages()).unwrap()
        );
    }

    #[test]
    fn echo_rule_is_degenerate() {
        let a = Assistant::new(Arc::new(ScriptedProvider::new(EditRule::EchoDocument)));
        assert!(matches!(
            a.propose_edit(&policy_doc(), &deadline_messages()),
            Err(AssistantError::DegenerateOutput(_))
        ));
    }

    #[test]
    fn creation_content() {
        let a = Assistant::scripted();
        let (content, _) = a
            .propose_edit(&DocumentFile::blank("we-aim-for-a-decision.md"), &deadline_messages()[2..])
            .unwrap();
        assert_eq!(
            content,
            "# We Aim For A Decision\n\n* We aim for a decision to submit a paper or not one month before the deadline.\n"
        );
    }

    #[test]
    fn answer_quotes_top_chunk() {
        let a = Assistant::scripted();
        let chunks = segment_document("echolabs-policy.md", POLICY, 1600);
        let ans = a.answer_question("When do we decide?", &chunks[1..]).unwrap();
        assert!(chunks[1].text.contains(&ans.text));
        assert_eq!(ans.cited_chunks, vec![chunks[1].chunk_id.clone()]);
        let empty = a.answer_question("?", &[]).unwrap();
        assert_eq!(empty.text, NO_SOURCE_ANSWER);
        assert!(empty.no_source);
    }

    fn record(rev: char, requester: &str, approver: &str, first: &str) -> RevisionRecord {
        RevisionRecord {
            revision: Revision::new(rev.to_string().repeat(40)),
            parent: None,
            author_time: 0,
            subject: String::new(),
            paths_changed: vec![],
            context: Some(ConversationContext {
                proposal_id: Uuid::nil(),
                requester_id: requester.into(),
                approver_id: approver.into(),
                messages: vec![msg(requester, "1", first)],
                summary: None,
            }),
            context_error: None,
        }
    }

    #[test]
    fn context_template_exact() {
        let long = "x".repeat(100);
        let records = vec![
            record('b', "U_ANDY", "U_LEE", &long),
            RevisionRecord { context: None, ..record('c', "", "", "") },
            record('a', "U_Q", "U_M", "line one\nline two"),
        ];
        let text = Assistant::scripted().summarize_context(&records).unwrap();
        assert_eq!(
            text,
            format!(
                "Context from 2 prior revision(s):\n- bbbbbbbb by U_ANDY, approved by U_LEE: \"{}\"\n- aaaaaaaa by U_Q, approved by U_M: \"line one line two\"",
                "x".repeat(80)
            )
        );
        assert_eq!(Assistant::scripted().summarize_context(&[]).unwrap(), "No prior revision context.");
    }

    #[test]
    fn change_summary_counts() {
        let a = Assistant::scripted();
        assert_eq!(
            a.summarize_change("# A\nx\n", "# A\nx\ny\n").unwrap(),
            "+1/\u{2212}0 lines in A"
        );
        assert_eq!(
            a.summarize_change("intro\n# A\nx\n# B\ny\n", "# A\n# B\n").unwrap(),
            "+0/\u{2212}3 lines in document preamble, A, B"
        );
    }

    #[test]
    fn outage_surfaces() {
        let a = Assistant::new(Arc::new(ScriptedProvider::unavailable()));
        assert!(matches!(
            a.answer_question("q", &[]),
            Err(AssistantError::ProviderUnavailable(_))
        ));
    }
}
