//! Heading-based markdown segmentation.

use serde::{Deserialize, Serialize};

use crate::text::normalize_content;

pub const DEFAULT_MAX_CHUNK_CHARS: usize = 1600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_path: String,
    pub heading_path: Vec<String>,
    pub ordinal: usize,
    pub text: String,
    pub char_count: usize,
}

/// Level and title of an ATX heading line, if `line` is one.
///
/// Accepts up to three leading spaces, one to six `#`, then a space, tab or
/// end of line. A closing run of `#` is stripped from the title.
pub fn atx_heading(line: &str) -> Option<(usize, String)> {
    let line = line.trim_end_matches('\n');
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let level = rest.len() - rest.trim_start_matches('#').len();
    if !(1..=6).contains(&level) {
        return None;
    }
    let after = &rest[level..];
    if !(after.is_empty() || after.starts_with([' ', '\t'])) {
        return None;
    }
    let mut title = after.trim();
    let stripped = title.trim_end_matches('#');
    if stripped.is_empty() || stripped.ends_with([' ', '\t']) {
        title = stripped.trim_end();
    }
    Some((level, title.to_string()))
}

fn fence_marker(line: &str) -> Option<&'static str> {
    let t = line.trim_start_matches(' ');
    if line.len() - t.len() > 3 {
        return None;
    }
    if t.starts_with("```") {
        Some("```")
    } else if t.starts_with("~~~") {
        Some("~~~")
    } else {
        None
    }
}

struct Section {
    heading_path: Vec<String>,
    text: String,
}

fn sections(content: &str) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut current = Section {
        heading_path: Vec::new(),
        text: String::new(),
    };
    let mut fence: Option<&'static str> = None;

    for line in content.split_inclusive('\n') {
        if let Some(open) = fence {
            if fence_marker(line) == Some(open) {
                fence = None;
            }
            current.text.push_str(line);
            continue;
        }
        if let Some(marker) = fence_marker(line) {
            fence = Some(marker);
            current.text.push_str(line);
            continue;
        }
        if let Some((level, title)) = atx_heading(line) {
            if !current.text.is_empty() {
                out.push(current);
            }
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, title));
            current = Section {
                heading_path: stack.iter().map(|(_, t)| t.clone()).collect(),
                text: String::new(),
            };
        }
        current.text.push_str(line);
    }
    if !current.text.is_empty() {
        out.push(current);
    }
    out
}

/// Paragraph units: each unit is a paragraph plus the blank lines after it.
fn paragraph_units(text: &str) -> Vec<&str> {
    let mut units = Vec::new();
    let mut start = 0;
    let mut offset = 0;
    let mut in_blank_run = false;
    for line in text.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if !blank && in_blank_run {
            units.push(&text[start..offset]);
            start = offset;
        }
        in_blank_run = blank;
        offset += line.len();
    }
    if start < text.len() {
        units.push(&text[start..]);
    }
    units
}

/// Splits `text` into pieces of at most `max` chars, preferring line breaks.
fn hard_split(text: &str, max: usize) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut rest = text;
    while rest.chars().count() > max {
        let limit = rest
            .char_indices()
            .nth(max)
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let cut = match rest[..limit].rfind('\n') {
            Some(nl) if nl + 1 < limit && nl > 0 => nl + 1,
            _ => limit,
        };
        pieces.push(&rest[..cut]);
        rest = &rest[cut..];
    }
    if !rest.is_empty() {
        pieces.push(rest);
    }
    pieces
}

fn pack(text: &str, max: usize) -> Vec<String> {
    if text.chars().count() <= max {
        return vec![text.to_string()];
    }
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_chars = 0;
    for unit in paragraph_units(text) {
        let pieces = if unit.chars().count() > max {
            hard_split(unit, max)
        } else {
            vec![unit]
        };
        for piece in pieces {
            let n = piece.chars().count();
            if current_chars + n > max && !current.is_empty() {
                out.push(std::mem::take(&mut current));
                current_chars = 0;
            }
            current.push_str(piece);
            current_chars += n;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Splits a markdown document into chunks at every ATX heading, then at
/// paragraph boundaries and finally by length so no chunk exceeds
/// `max_chunk_chars`. Concatenating chunk texts in ordinal order reproduces
/// the normalized document.
pub fn segment_document(path: &str, content: &str, max_chunk_chars: usize) -> Vec<Chunk> {
    let max = max_chunk_chars.max(1);
    let normalized = normalize_content(content);
    let mut chunks = Vec::new();
    for section in sections(&normalized) {
        for text in pack(&section.text, max) {
            let ordinal = chunks.len();
            chunks.push(Chunk {
                chunk_id: format!("{path}#{ordinal}"),
                doc_path: path.to_string(),
                heading_path: section.heading_path.clone(),
                ordinal,
                char_count: text.chars().count(),
                text,
            });
        }
    }
    chunks
}
