//! Rooted topic trees whose node level equals depth + 1.
//!
//! Nodes live in an arena addressed by [`NodeId`]. Removed nodes leave a
//! tombstone so ids handed out earlier never get reused by a different
//! topic within the lifetime of one tree value. Loading from a document
//! assigns ids in pre-order starting at 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("unknown topic: {0}")]
    UnknownTopic(String),
    #[error("depth exceeded: a level-{level} topic cannot have children (max depth {max_depth})")]
    DepthExceeded { level: usize, max_depth: usize },
    #[error("every label was rejected ({} rejections)", .0.len())]
    AllRejected(Vec<Rejection>),
    #[error("the root topic cannot be pruned")]
    PruneRoot,
    #[error("invalid label: {0:?}")]
    InvalidLabel(String),
    #[error("max depth must be at least 1, got {0}")]
    InvalidMaxDepth(usize),
    #[error("tree has no root node")]
    NoRoot,
    #[error("level ladder is not contiguous over 1..={max_depth}: {detail}")]
    BadLevelLadder { max_depth: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

/// Comparison key for labels: trimmed, inner whitespace collapsed, lowercased.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicNode {
    pub id: NodeId,
    pub label: String,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
}

/// Root-to-target label sequence. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TopicPath(Vec<String>);

impl TopicPath {
    pub fn new<I, S>(labels: I) -> Result<Self, HierarchyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(HierarchyError::InvalidPath("path is empty".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.trim().is_empty()) {
            return Err(HierarchyError::InvalidPath(format!(
                "path contains an empty label {bad:?}"
            )));
        }
        Ok(TopicPath(labels))
    }

    pub fn root(label: impl Into<String>) -> Result<Self, HierarchyError> {
        Self::new([label.into()])
    }

    /// Parses a `/`-separated path such as `Computer Science/Databases`.
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        if text.trim().is_empty() {
            return Err(HierarchyError::InvalidPath("path is empty".into()));
        }
        Self::new(text.split('/').map(|s| s.trim().to_string()))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    /// The topic the path points at.
    pub fn current(&self) -> &str {
        self.0.last().expect("non-empty path")
    }

    pub fn root_label(&self) -> &str {
        &self.0[0]
    }

    /// Every label except the current one.
    pub fn ancestors(&self) -> &[String] {
        &self.0[..self.0.len() - 1]
    }

    pub fn child(&self, label: impl Into<String>) -> TopicPath {
        let mut labels = self.0.clone();
        labels.push(label.into());
        TopicPath(labels)
    }
}

impl TryFrom<Vec<String>> for TopicPath {
    type Error = HierarchyError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        TopicPath::new(labels)
    }
}

impl From<TopicPath> for Vec<String> {
    fn from(path: TopicPath) -> Self {
        path.0
    }
}

impl fmt::Display for TopicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// Level of a raw label sequence: its length.
pub fn level_of<S: AsRef<str>>(labels: &[S]) -> Result<usize, HierarchyError> {
    if labels.is_empty() {
        return Err(HierarchyError::InvalidPath("path is empty".into()));
    }
    Ok(labels.len())
}

/// One row of the specificity ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDefinition {
    pub level: usize,
    pub definition: String,
    pub example: String,
}

/// The five-level ladder used for Computer Science topics.
pub fn default_levels() -> Vec<LevelDefinition> {
    [
        (
            1,
            "Topics related to domains areas of study",
            "Computer Science",
        ),
        (
            2,
            "Subtopics that explore general topics",
            "Data Structures",
        ),
        (3, "Subtopics that are general concepts", "Algorithms"),
        (
            4,
            "Subtopics exploring different use cases of general concepts",
            "Shortest Path Algorithms",
        ),
        (
            5,
            "Subtopics that focus on specific implementations",
            "Dijkstra's algorithm",
        ),
    ]
    .into_iter()
    .map(|(level, definition, example)| LevelDefinition {
        level,
        definition: definition.to_string(),
        example: example.to_string(),
    })
    .collect()
}

/// Checks that `levels` covers exactly `1..=max_depth`, each once.
pub fn check_level_ladder(
    levels: &[LevelDefinition],
    max_depth: usize,
) -> Result<(), HierarchyError> {
    let mut seen = BTreeMap::new();
    for def in levels {
        *seen.entry(def.level).or_insert(0usize) += 1;
    }
    let bad = |detail: String| HierarchyError::BadLevelLadder { max_depth, detail };
    if let Some((level, _)) = seen.iter().find(|(_, n)| **n > 1) {
        return Err(bad(format!("level {level} defined more than once")));
    }
    for level in 1..=max_depth {
        if !seen.contains_key(&level) {
            return Err(bad(format!("level {level} missing")));
        }
    }
    if let Some(level) = seen.keys().find(|l| **l == 0 || **l > max_depth) {
        return Err(bad(format!("level {level} out of range")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Duplicate,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub label: String,
    pub reason: RejectReason,
    /// The sibling the label collided with, for duplicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddOutcome {
    pub added: Vec<NodeId>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyLabel {
        node: NodeId,
    },
    DuplicateSibling {
        parent: NodeId,
        nodes: Vec<NodeId>,
        label: String,
    },
    DepthOverflow {
        node: NodeId,
        level: usize,
        max_depth: usize,
    },
    Orphan {
        node: NodeId,
    },
    ExtraRoot {
        node: NodeId,
    },
}

/// Same label under two different parents. Allowed, but worth a look.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossBranchRepeat {
    pub label: String,
    pub nodes: Vec<NodeId>,
}

/// Serialized tree: `{ "max_depth": 5, "root": { "label": ..., "children": [...] } }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDocument {
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    pub root: NodeDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDocument {
    /// Kept by session stores so ids survive a save; suites leave it out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<NodeId>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeDocument>,
}

fn default_max_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

fn collect_ids(doc: &NodeDocument, out: &mut Vec<Option<NodeId>>) {
    out.push(doc.id);
    for c in &doc.children {
        collect_ids(c, out);
    }
}

fn push_document(
    doc: &NodeDocument,
    parent: Option<NodeId>,
    keep_ids: bool,
    out: &mut Vec<TopicNode>,
) -> NodeId {
    let id = match doc.id {
        Some(id) if keep_ids => id,
        _ => NodeId(out.len() as u32),
    };
    let at = out.len();
    out.push(TopicNode {
        id,
        label: doc.label.clone(),
        children: Vec::new(),
        parent,
    });
    for child in &doc.children {
        let child_id = push_document(child, Some(id), keep_ids, out);
        out[at].children.push(child_id);
    }
    id
}

impl TreeDocument {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Canonical form: 2-space indented JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("tree document serializes");
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicTree {
    max_depth: usize,
    root: NodeId,
    nodes: Vec<Option<TopicNode>>,
}

impl TopicTree {
    pub fn new(root_label: &str) -> Result<Self, HierarchyError> {
        Self::with_max_depth(root_label, DEFAULT_MAX_DEPTH)
    }

    pub fn with_max_depth(root_label: &str, max_depth: usize) -> Result<Self, HierarchyError> {
        if max_depth == 0 {
            return Err(HierarchyError::InvalidMaxDepth(max_depth));
        }
        if root_label.trim().is_empty() {
            return Err(HierarchyError::InvalidLabel(root_label.to_string()));
        }
        let root = NodeId(0);
        Ok(TopicTree {
            max_depth,
            root,
            nodes: vec![Some(TopicNode {
                id: root,
                label: root_label.to_string(),
                children: Vec::new(),
                parent: None,
            })],
        })
    }

    /// Builds a tree from raw nodes without checking any invariant.
    ///
    /// The first parentless node becomes the root. Use [`TopicTree::validate`]
    /// to find out what is wrong with the result.
    pub fn from_nodes(max_depth: usize, nodes: Vec<TopicNode>) -> Result<Self, HierarchyError> {
        if max_depth == 0 {
            return Err(HierarchyError::InvalidMaxDepth(max_depth));
        }
        let len = nodes.iter().map(|n| n.id.index() + 1).max().unwrap_or(0);
        let mut slots: Vec<Option<TopicNode>> = vec![None; len];
        let mut root = None;
        for node in nodes {
            if node.parent.is_none() && root.is_none() {
                root = Some(node.id);
            }
            let idx = node.id.index();
            slots[idx] = Some(node);
        }
        Ok(TopicTree {
            max_depth,
            root: root.ok_or(HierarchyError::NoRoot)?,
            nodes: slots,
        })
    }

    /// Loads a document verbatim.
    ///
    /// Stored ids are kept when every node has one and none repeat;
    /// otherwise ids are assigned in pre-order. No invariants are checked
    /// so that a broken document can still be inspected with
    /// [`TopicTree::validate`].
    pub fn from_document(doc: &TreeDocument) -> Result<Self, HierarchyError> {
        if doc.max_depth == 0 {
            return Err(HierarchyError::InvalidMaxDepth(doc.max_depth));
        }
        let mut stored = Vec::new();
        collect_ids(&doc.root, &mut stored);
        let unique: HashSet<Option<NodeId>> = stored.iter().copied().collect();
        let keep_ids = stored.iter().all(Option::is_some) && unique.len() == stored.len();
        let mut nodes = Vec::new();
        push_document(&doc.root, None, keep_ids, &mut nodes);
        Self::from_nodes(doc.max_depth, nodes)
    }

    /// Document without node ids.
    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            max_depth: self.max_depth,
            root: self.node_document(self.root, false),
        }
    }

    /// Document that records every node id, so reloading keeps them.
    pub fn to_document_with_ids(&self) -> TreeDocument {
        TreeDocument {
            max_depth: self.max_depth,
            root: self.node_document(self.root, true),
        }
    }

    fn node_document(&self, id: NodeId, with_ids: bool) -> NodeDocument {
        let node = self.slot(id);
        NodeDocument {
            id: with_ids.then_some(id),
            label: node.label.clone(),
            children: node
                .children
                .iter()
                .filter(|c| self.node(**c).is_some())
                .map(|c| self.node_document(*c, with_ids))
                .collect(),
        }
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> Option<&TopicNode> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    fn slot(&self, id: NodeId) -> &TopicNode {
        self.node(id).expect("live node id")
    }

    fn slot_mut(&mut self, id: NodeId) -> &mut TopicNode {
        self.nodes[id.index()].as_mut().expect("live node id")
    }

    /// Number of live nodes.
    pub fn len(&self) -> usize {
        self.nodes.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Live node ids reachable from the root, in pre-order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            let Some(node) = self.node(id) else { continue };
            out.push(id);
            for child in node.children.iter().rev() {
                stack.push(*child);
            }
        }
        out
    }

    /// Number of parent hops to the root, or `None` if the parent chain is
    /// broken or cyclic.
    pub fn depth(&self, id: NodeId) -> Option<usize> {
        let mut node = self.node(id)?;
        let mut depth = 0;
        while let Some(parent) = node.parent {
            depth += 1;
            if depth > self.nodes.len() {
                return None;
            }
            node = self.node(parent)?;
        }
        (node.id == self.root).then_some(depth)
    }

    pub fn level(&self, id: NodeId) -> Option<usize> {
        self.depth(id).map(|d| d + 1)
    }

    pub fn path_of(&self, id: NodeId) -> Result<TopicPath, HierarchyError> {
        let unknown = || HierarchyError::UnknownTopic(format!("node {id}"));
        self.depth(id).ok_or_else(unknown)?;
        let mut labels = Vec::new();
        let mut cursor = Some(id);
        while let Some(cur) = cursor {
            let node = self.node(cur).ok_or_else(unknown)?;
            labels.push(node.label.clone());
            cursor = node.parent;
        }
        labels.reverse();
        TopicPath::new(labels)
    }

    /// Finds the node addressed by `path`, comparing labels in normalized form.
    pub fn resolve(&self, path: &TopicPath) -> Result<NodeId, HierarchyError> {
        let unknown = || HierarchyError::UnknownTopic(path.to_string());
        let labels = path.labels();
        let root = self.slot(self.root);
        if normalize_label(&root.label) != normalize_label(&labels[0]) {
            return Err(unknown());
        }
        let mut current = self.root;
        for label in &labels[1..] {
            let wanted = normalize_label(label);
            current = self
                .slot(current)
                .children
                .iter()
                .copied()
                .find(|c| {
                    self.node(*c)
                        .is_some_and(|n| normalize_label(&n.label) == wanted)
                })
                .ok_or_else(unknown)?;
        }
        Ok(current)
    }

    /// Appends `labels` as children of the node at `parent_path`, in order.
    pub fn add_children<S: AsRef<str>>(
        &mut self,
        parent_path: &TopicPath,
        labels: &[S],
    ) -> Result<AddOutcome, HierarchyError> {
        let parent = self.resolve(parent_path)?;
        self.add_children_at(parent, labels)
    }

    pub fn add_children_at<S: AsRef<str>>(
        &mut self,
        parent: NodeId,
        labels: &[S],
    ) -> Result<AddOutcome, HierarchyError> {
        let level = self
            .level(parent)
            .ok_or_else(|| HierarchyError::UnknownTopic(format!("node {parent}")))?;
        if level >= self.max_depth {
            return Err(HierarchyError::DepthExceeded {
                level,
                max_depth: self.max_depth,
            });
        }
        let mut taken: HashMap<String, NodeId> = self
            .slot(parent)
            .children
            .iter()
            .filter_map(|c| self.node(*c))
            .map(|n| (normalize_label(&n.label), n.id))
            .collect();
        let mut outcome = AddOutcome::default();
        for label in labels {
            let label = label.as_ref();
            let key = normalize_label(label);
            if key.is_empty() {
                outcome.rejected.push(Rejection {
                    label: label.to_string(),
                    reason: RejectReason::Empty,
                    existing: None,
                });
                continue;
            }
            if let Some(existing) = taken.get(&key) {
                outcome.rejected.push(Rejection {
                    label: label.to_string(),
                    reason: RejectReason::Duplicate,
                    existing: Some(*existing),
                });
                continue;
            }
            let id = NodeId(self.nodes.len() as u32);
            self.nodes.push(Some(TopicNode {
                id,
                label: label.to_string(),
                children: Vec::new(),
                parent: Some(parent),
            }));
            self.slot_mut(parent).children.push(id);
            taken.insert(key, id);
            outcome.added.push(id);
        }
        if outcome.added.is_empty() && !outcome.rejected.is_empty() {
            return Err(HierarchyError::AllRejected(outcome.rejected));
        }
        Ok(outcome)
    }

    /// Removes `id` and all of its descendants; returns how many nodes went.
    pub fn prune(&mut self, id: NodeId) -> Result<usize, HierarchyError> {
        if id == self.root {
            return Err(HierarchyError::PruneRoot);
        }
        let node = self
            .node(id)
            .ok_or_else(|| HierarchyError::UnknownTopic(format!("node {id}")))?;
        if let Some(parent) = node.parent {
            if self.node(parent).is_some() {
                self.slot_mut(parent).children.retain(|c| *c != id);
            }
        }
        let mut removed = 0;
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some(node) = self.nodes.get_mut(cur.index()).and_then(Option::take) {
                removed += 1;
                stack.extend(node.children);
            }
        }
        Ok(removed)
    }

    /// Every invariant violation, in node-id order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let reachable: HashSet<NodeId> = self.preorder().into_iter().collect();
        for node in self.nodes.iter().flatten() {
            if node.label.trim().is_empty() {
                out.push(Violation::EmptyLabel { node: node.id });
            }
            if node.parent.is_none() {
                if node.id != self.root {
                    out.push(Violation::ExtraRoot { node: node.id });
                }
            } else {
                let linked = node
                    .parent
                    .and_then(|p| self.node(p))
                    .is_some_and(|p| p.children.contains(&node.id));
                if !linked || !reachable.contains(&node.id) || self.depth(node.id).is_none() {
                    out.push(Violation::Orphan { node: node.id });
                }
            }
            if let Some(level) = self.level(node.id) {
                if level > self.max_depth {
                    out.push(Violation::DepthOverflow {
                        node: node.id,
                        level,
                        max_depth: self.max_depth,
                    });
                }
            }
            let mut groups: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
            for child in &node.children {
                if let Some(c) = self.node(*child) {
                    groups
                        .entry(normalize_label(&c.label))
                        .or_default()
                        .push(c.id);
                }
            }
            for (label, nodes) in groups {
                if nodes.len() > 1 && !label.is_empty() {
                    out.push(Violation::DuplicateSibling {
                        parent: node.id,
                        nodes,
                        label,
                    });
                }
            }
        }
        out
    }

    /// Labels that occur under more than one parent.
    pub fn cross_branch_repeats(&self) -> Vec<CrossBranchRepeat> {
        let mut by_label: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
        for id in self.preorder() {
            by_label
                .entry(normalize_label(&self.slot(id).label))
                .or_default()
                .push(id);
        }
        by_label
            .into_iter()
            .filter(|(_, nodes)| {
                let parents: HashSet<_> = nodes.iter().map(|n| self.slot(*n).parent).collect();
                parents.len() > 1
            })
            .map(|(label, nodes)| CrossBranchRepeat { label, nodes })
            .collect()
    }
}
