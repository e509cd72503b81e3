//! Prompt templates for requesting subtopics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::TopicPath;

pub const DEFAULT_K: usize = 5;

/// Appended after the canonical sentence when [`PromptRequest::format_hint`] is set.
pub const FORMAT_HINT: &str = "Respond with a numbered list only.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown strategy {0:?} (expected current, root or full)")]
    UnknownStrategy(String),
}

/// How much ancestor context goes into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptStrategy {
    CurrentTopic,
    RootPlusCurrent,
    FullPathPlusCurrent,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 3] = [
        PromptStrategy::CurrentTopic,
        PromptStrategy::RootPlusCurrent,
        PromptStrategy::FullPathPlusCurrent,
    ];

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            PromptStrategy::CurrentTopic => "current",
            PromptStrategy::RootPlusCurrent => "root",
            PromptStrategy::FullPathPlusCurrent => "full",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PromptStrategy::CurrentTopic => "Current Topic",
            PromptStrategy::RootPlusCurrent => "Root + Current Topic",
            PromptStrategy::FullPathPlusCurrent => "Full Path + Current Topic",
        }
    }

    /// Parses a comma-separated list such as `current,root,full`.
    pub fn parse_list(text: &str) -> Result<Vec<PromptStrategy>, PromptError> {
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let s: PromptStrategy = part.parse()?;
            if !out.contains(&s) {
                out.push(s);
            }
        }
        if out.is_empty() {
            return Err(PromptError::InvalidArgument("no strategies given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for PromptStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" | "currenttopic" | "current_topic" => Ok(PromptStrategy::CurrentTopic),
            "root" | "rootpluscurrent" | "root_plus_current" => Ok(PromptStrategy::RootPlusCurrent),
            "full" | "fullpathpluscurrent" | "full_path_plus_current" => {
                Ok(PromptStrategy::FullPathPlusCurrent)
            }
            _ => Err(PromptError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub strategy: PromptStrategy,
    pub path: TopicPath,
    pub k: usize,
    #[serde(default)]
    pub format_hint: bool,
}

impl PromptRequest {
    pub fn new(strategy: PromptStrategy, path: TopicPath) -> Self {
        PromptRequest {
            strategy,
            path,
            k: DEFAULT_K,
            format_hint: false,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_format_hint(mut self, on: bool) -> Self {
        self.format_hint = on;
        self
    }
}

/// Joins labels as prose: `A`, `A and B`, `A, B, and C`.
pub fn join_context<S: AsRef<str>>(labels: &[S]) -> Result<String, PromptError> {
    let labels: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
    match labels.as_slice() {
        [] => Err(PromptError::InvalidArgument(
            "cannot join an empty label list".into(),
        )),
        [one] => Ok(one.to_string()),
        [a, b] => Ok(format!("{a} and {b}")),
        [init @ .., last] => Ok(format!("{}, and {last}", init.join(", "))),
    }
}

/// Renders the prompt text for `req`.
///
/// A path of length 1 has no ancestors, so every strategy falls back to the
/// current-topic wording.
pub fn render_prompt(req: &PromptRequest) -> Result<String, PromptError> {
    if req.k == 0 {
        return Err(PromptError::InvalidArgument("k must be at least 1".into()));
    }
    let path = &req.path;
    let current = path.current();
    let k = req.k;
    let context = match req.strategy {
        _ if path.level() == 1 => None,
        PromptStrategy::CurrentTopic => None,
        PromptStrategy::RootPlusCurrent => Some(path.root_label().to_string()),
        PromptStrategy::FullPathPlusCurrent => Some(join_context(path.ancestors())?),
    };
    let mut text = match context {
        None => format!("List {k} subtopics of {current}."),
        Some(ctx) => format!("In {ctx}, list {k} subtopics of {current}."),
    };
    if req.format_hint {
        text.push(' ');
        text.push_str(FORMAT_HINT);
    }
    Ok(text)
}
