//! Prompt templates for the remote provider.

use std::path::Path;

use crate::index::Chunk;
use crate::repo::{RevisionRecord, SourceMessage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub propose_edit: String,
    pub answer_question: String,
    pub summarize_context: String,
    pub summarize_change: String,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            propose_edit: include_str!("../../prompts/propose_edit.txt").to_string(),
            answer_question: include_str!("../../prompts/answer_question.txt").to_string(),
            summarize_context: include_str!("../../prompts/summarize_context.txt").to_string(),
            summarize_change: include_str!("../../prompts/summarize_change.txt").to_string(),
        }
    }

    /// Loads `<task>.txt` files from `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(format!("{name}.txt")));
        Ok(Self {
            propose_edit: read("propose_edit")?,
            answer_question: read("answer_question")?,
            summarize_context: read("summarize_context")?,
            summarize_change: read("summarize_change")?,
        })
    }
}

/// Substitutes `{{name}}` placeholders. Unknown placeholders are left as is.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

pub fn format_messages(messages: &[SourceMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{} ({}): {}", m.author_id, m.timestamp, m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_chunks(chunks: &[Chunk]) -> String {
    chunks
        .iter()
        .map(|c| format!("[{}]\n{}", c.chunk_id, c.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn format_history(records: &[RevisionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("revision {} ({})\n", r.revision.short(), r.subject));
        match &r.context {
            Some(ctx) => {
                out.push_str(&format!(
                    "requested by {}, approved by {}\n",
                    ctx.requester_id, ctx.approver_id
                ));
                out.push_str(&format_messages(&ctx.messages));
                out.push('\n');
            }
            None => out.push_str("(no recorded conversation)\n"),
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders() {
        let t = "Q: {{question}}\nC: {{chunks}} {{unknown}}";
        assert_eq!(
            render(t, &[("question", "why?"), ("chunks", "none")]),
            "Q: why?\nC: none {{unknown}}"
        );
    }

    #[test]
    fn builtin_templates_use_their_placeholders() {
        let p = PromptSet::builtin();
        assert!(p.propose_edit.contains("{{document}}") && p.propose_edit.contains("{{messages}}"));
        assert!(p.answer_question.contains("{{question}}") && p.answer_question.contains("{{chunks}}"));
        assert!(p.summarize_context.contains("{{history}}"));
        assert!(p.summarize_change.contains("{{document}}"));
    }
}
