//! Text normalization shared by the store, the index and the assistant.

/// Normalizes line endings to `\n` and ensures exactly one trailing newline.
///
/// Empty (or newline-only) input normalizes to the empty string so that a
/// document with no content stays empty rather than becoming `"\n"`.
pub fn normalize_content(input: &str) -> String {
    let unified = input.replace("\r\n", "\n").replace('\r', "\n");
    let trimmed = unified.trim_end_matches('\n');
    if trimmed.is_empty() {
        return String::new();
    }
    let mut out = String::with_capacity(trimmed.len() + 1);
    out.push_str(trimmed);
    out.push('\n');
    out
}

/// Truncates to at most `max` characters (not bytes).
pub fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

/// Lowercase slug made of alphanumeric runs joined by `-`, capped at `max_words`.
/// Words starting with `@` (chat mentions) are skipped.
pub fn slugify(text: &str, max_words: usize) -> String {
    let words: Vec<String> = text
        .split_whitespace()
        .filter(|w| !w.starts_with('@') && !w.starts_with("<@"))
        .flat_map(|w| {
            w.split(|c: char| !c.is_alphanumeric())
                .filter(|s| !s.is_empty())
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .take(max_words)
        .collect();
    words.join("-")
}
