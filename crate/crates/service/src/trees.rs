//! On-disk session trees: `<store>/trees/<id>/{tree.json,session.json,expansions.jsonl}`.
//!
//! `tree.json` is the same document the CLI reads and writes, with node ids
//! stored so they stay put across saves and prunes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use scopetree::hierarchy::{NodeId, TopicTree, TreeDocument};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::ApiError;

pub const TREE_FILE: &str = "tree.json";
pub const SESSION_FILE: &str = "session.json";
pub const EXPANSIONS_FILE: &str = "expansions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub tree_id: String,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub label: String,
    pub level: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// A tree as returned by the API, nodes in pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeView {
    pub tree_id: String,
    pub max_depth: usize,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
    pub nodes: Vec<NodeView>,
}

impl TreeView {
    pub fn new(info: &SessionInfo, tree: &TopicTree) -> Self {
        let nodes = tree
            .preorder()
            .into_iter()
            .filter_map(|id| {
                let node = tree.node(id)?;
                Some(NodeView {
                    id,
                    label: node.label.clone(),
                    level: tree.level(id)?,
                    parent: node.parent,
                    children: node.children.clone(),
                })
            })
            .collect();
        TreeView {
            tree_id: info.tree_id.clone(),
            max_depth: tree.max_depth(),
            created_at: info.created_at,
            modified_at: info.modified_at,
            nodes,
        }
    }
}

/// Ids are used as directory names, so only a safe alphabet is accepted.
pub fn check_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::NotFound(format!("unknown id {id:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct TreeStore {
    root: PathBuf,
}

impl TreeStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(TreeStore { root })
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn expansions_path(&self, id: &str) -> PathBuf {
        self.dir(id).join(EXPANSIONS_FILE)
    }

    pub fn create(&self, tree: &TopicTree) -> Result<SessionInfo, ApiError> {
        let now = Utc::now();
        let info = SessionInfo {
            tree_id: Uuid::new_v4().simple().to_string(),
            created_at: now,
            modified_at: now,
        };
        fs::create_dir_all(self.dir(&info.tree_id)).map_err(internal)?;
        self.write(&info, tree)?;
        Ok(info)
    }

    pub fn load(&self, id: &str) -> Result<(SessionInfo, TopicTree), ApiError> {
        check_id(id)?;
        let dir = self.dir(id);
        let text = match fs::read_to_string(dir.join(TREE_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ApiError::NotFound(format!("unknown tree {id}")))
            }
            Err(e) => return Err(internal(e)),
        };
        let doc = TreeDocument::from_json(&text).map_err(internal)?;
        let tree = TopicTree::from_document(&doc).map_err(internal)?;
        // Trees dropped in by hand may lack session metadata.
        let info = fs::read_to_string(dir.join(SESSION_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_else(|| SessionInfo {
                tree_id: id.to_string(),
                created_at: DateTime::<Utc>::UNIX_EPOCH,
                modified_at: DateTime::<Utc>::UNIX_EPOCH,
            });
        Ok((info, tree))
    }

    /// Validates and writes; the previous state stays on disk if anything fails.
    pub fn save(&self, info: &mut SessionInfo, tree: &TopicTree) -> Result<(), ApiError> {
        info.modified_at = Utc::now();
        self.write(info, tree)
    }

    fn write(&self, info: &SessionInfo, tree: &TopicTree) -> Result<(), ApiError> {
        let violations = tree.validate();
        if !violations.is_empty() {
            return Err(ApiError::InvalidTree(violations));
        }
        let dir = self.dir(&info.tree_id);
        write_atomic(
            &dir.join(TREE_FILE),
            tree.to_document_with_ids().to_json().as_bytes(),
        )?;
        let mut meta = serde_json::to_string_pretty(info).expect("session info serializes");
        meta.push('\n');
        write_atomic(&dir.join(SESSION_FILE), meta.as_bytes())
    }

    /// Session info of every stored tree, newest first.
    pub fn list(&self) -> Result<Vec<SessionInfo>, ApiError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(internal)? {
            let entry = entry.map_err(internal)?;
            if !entry.path().join(TREE_FILE).is_file() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            if check_id(&id).is_ok() {
                out.push(self.load(&id)?.0);
            }
        }
        out.sort_by(|a, b| {
            b.modified_at
                .cmp(&a.modified_at)
                .then(a.tree_id.cmp(&b.tree_id))
        });
        Ok(out)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(internal)?;
    fs::rename(&tmp, path).map_err(internal)
}

pub(crate) fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}
