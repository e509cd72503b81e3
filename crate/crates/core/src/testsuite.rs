//! Evaluation test suites: fixed hierarchies whose nodes are prompt targets.
//!
//! A suite document is a tree document with extra `name`, `reconstruction`,
//! and optional `target_counts_by_level` fields. Every node above the
//! deepest level is a prompt target, since prompting a level-L topic yields
//! level-(L+1) subtopics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hierarchy::{HierarchyError, TopicPath, TopicTree, TreeDocument, Violation};

/// Computer Science suite: four level-2 areas, 29 prompt targets.
pub const COMPUTER_SCIENCE_SUITE: &str = include_str!("../suites/computer_science.json");

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("suite format error at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("suite is invalid: {} violation(s): {violations:?}", .violations.len())]
    Invalid { violations: Vec<Violation> },
    #[error("suite declares {declared} prompt targets at level {level} but has {actual}")]
    DeclaredCountMismatch {
        level: usize,
        declared: usize,
        actual: usize,
    },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteDocument {
    pub name: String,
    #[serde(default)]
    pub reconstruction: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_counts_by_level: Option<BTreeMap<usize, usize>>,
    #[serde(flatten)]
    pub tree: TreeDocument,
}

#[derive(Debug, Clone)]
pub struct TestSuite {
    name: String,
    reconstruction: bool,
    declared_counts: Option<BTreeMap<usize, usize>>,
    tree: TopicTree,
    prompt_targets: Vec<TopicPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub name: String,
    pub reconstruction: bool,
    pub max_depth: usize,
    pub total_nodes: usize,
    pub nodes_by_level: BTreeMap<usize, usize>,
    pub total_targets: usize,
    pub targets_by_level: BTreeMap<usize, usize>,
    pub k: usize,
    pub expected_generations_per_strategy: usize,
}

/// Parses and validates a suite document.
pub fn load_suite(text: &str) -> Result<TestSuite, SuiteError> {
    let doc: SuiteDocument = serde_json::from_str(text).map_err(|e| SuiteError::Format {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    TestSuite::from_document(doc)
}

impl TestSuite {
    pub fn from_document(doc: SuiteDocument) -> Result<Self, SuiteError> {
        let tree = TopicTree::from_document(&doc.tree)?;
        let violations = tree.validate();
        if !violations.is_empty() {
            return Err(SuiteError::Invalid { violations });
        }
        let max_depth = tree.max_depth();
        let prompt_targets = tree
            .preorder()
            .into_iter()
            .filter(|id| tree.level(*id).is_some_and(|l| l < max_depth))
            .map(|id| tree.path_of(id))
            .collect::<Result<Vec<_>, _>>()?;
        let suite = TestSuite {
            name: doc.name,
            reconstruction: doc.reconstruction,
            declared_counts: doc.target_counts_by_level,
            tree,
            prompt_targets,
        };
        if let Some(declared) = &suite.declared_counts {
            let actual = suite.targets_by_level();
            let levels = declared.keys().chain(actual.keys());
            for level in levels {
                let d = declared.get(level).copied().unwrap_or(0);
                let a = actual.get(level).copied().unwrap_or(0);
                if d != a {
                    return Err(SuiteError::DeclaredCountMismatch {
                        level: *level,
                        declared: d,
                        actual: a,
                    });
                }
            }
        }
        Ok(suite)
    }

    pub fn from_path(path: &Path) -> Result<Self, SuiteError> {
        let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_suite(&text)
    }

    /// The bundled Computer Science suite.
    pub fn computer_science() -> Self {
        load_suite(COMPUTER_SCIENCE_SUITE).expect("bundled suite is valid")
    }

    /// A suite made of a single root topic.
    pub fn lone_root(name: &str, root_label: &str) -> Result<Self, SuiteError> {
        let tree = TopicTree::new(root_label)?;
        Self::from_document(SuiteDocument {
            name: name.to_string(),
            reconstruction: false,
            target_counts_by_level: None,
            tree: tree.to_document(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_reconstruction(&self) -> bool {
        self.reconstruction
    }

    pub fn tree(&self) -> &TopicTree {
        &self.tree
    }

    pub fn max_depth(&self) -> usize {
        self.tree.max_depth()
    }

    /// Prompt targets in pre-order.
    pub fn prompt_targets(&self) -> &[TopicPath] {
        &self.prompt_targets
    }

    pub fn targets_by_level(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for t in &self.prompt_targets {
            *out.entry(t.level()).or_insert(0) += 1;
        }
        out
    }

    pub fn to_document(&self) -> SuiteDocument {
        SuiteDocument {
            name: self.name.clone(),
            reconstruction: self.reconstruction,
            target_counts_by_level: self.declared_counts.clone(),
            tree: self.tree.to_document(),
        }
    }

    /// Canonical JSON text of the suite.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_document()).expect("suite serializes");
        out.push('\n');
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn describe(&self, k: usize) -> SuiteSummary {
        let mut nodes_by_level = BTreeMap::new();
        for id in self.tree.preorder() {
            if let Some(level) = self.tree.level(id) {
                *nodes_by_level.entry(level).or_insert(0) += 1;
            }
        }
        SuiteSummary {
            name: self.name.clone(),
            reconstruction: self.reconstruction,
            max_depth: self.max_depth(),
            total_nodes: self.tree.len(),
            nodes_by_level,
            total_targets: self.prompt_targets.len(),
            targets_by_level: self.targets_by_level(),
            k,
            expected_generations_per_strategy: k * self.prompt_targets.len(),
        }
    }
}
