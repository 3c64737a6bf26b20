//! Synthetic inputs shared by the criterion benches.

use choir_core::repo::DocumentFile;

const WORDS: &[&str] = &[
    "paper", "deadline", "submit", "decision", "month", "lab", "meeting", "travel", "budget",
    "review", "draft", "figure", "study", "participant", "policy", "server", "access", "key",
    "onboarding", "writing", "talk", "conference", "reimbursement", "schedule",
];

/// Deterministic markdown corpus of `docs` documents with `sections` sections each.
pub fn synthetic_corpus(docs: usize, sections: usize) -> Vec<DocumentFile> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..docs)
        .map(|d| {
            let mut content = format!("# Document {d}\n\n");
            for s in 0..sections {
                content.push_str(&format!("## Section {s}\n\n"));
                for _ in 0..4 {
                    let line: Vec<&str> = (0..12)
                        .map(|_| WORDS[(next() % WORDS.len() as u64) as usize])
                        .collect();
                    content.push_str(&format!("* {}\n", line.join(" ")));
                }
                content.push('\n');
            }
            DocumentFile {
                path: format!("doc-{d}.md"),
                content,
                revision: None,
            }
        })
        .collect()
}
