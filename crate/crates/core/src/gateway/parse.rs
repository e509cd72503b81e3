//! Extracts subtopic labels from a free-text list completion.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("expected {expected} subtopics, parsed {}", .parsed.len())]
    CountMismatch {
        expected: usize,
        parsed: Vec<String>,
    },
    #[error("no list items found in response")]
    NoItems { raw: String },
}

// Bullet (`-`, `*`, `•`) or `N.` / `N)`, then at least one whitespace.
static ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|[0-9]+[.)])\s+(.*)$").expect("item pattern"));

const SEPARATORS: [&str; 3] = [":", " – ", " — "];

fn strip_emphasis(text: &str) -> &str {
    text.trim()
        .trim_start_matches(['*', '_'])
        .trim_end_matches(['*', '_'])
        .trim()
}

fn clean_item(body: &str) -> String {
    let mut text = strip_emphasis(body);
    if let Some(stripped) = text.strip_suffix('.') {
        text = stripped;
    }
    let text = strip_emphasis(text);
    let cut = SEPARATORS
        .iter()
        .filter_map(|sep| text.find(sep))
        .min()
        .unwrap_or(text.len());
    // The separator may sit inside a bold span (`**Name:** definition`).
    strip_emphasis(&text[..cut]).to_string()
}

/// Labels of the list items in `raw`, in order of appearance.
///
/// Items whose label is empty after cleaning are skipped.
pub fn extract_items(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(|line| ITEM.captures(line))
        .map(|caps| clean_item(&caps[1]))
        .filter(|label| !label.is_empty())
        .collect()
}

/// Parses `raw` and checks that exactly `expected_k` items came back.
pub fn parse_subtopics(raw: &str, expected_k: usize) -> Result<Vec<String>, ParseError> {
    let items = extract_items(raw);
    if items.is_empty() {
        return Err(ParseError::NoItems {
            raw: raw.to_string(),
        });
    }
    if items.len() != expected_k {
        return Err(ParseError::CountMismatch {
            expected: expected_k,
            parsed: items,
        });
    }
    Ok(items)
}
