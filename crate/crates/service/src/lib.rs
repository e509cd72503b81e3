//! JSON-over-HTTP access to session trees, runs, annotations and reports.
//!
//! Store layout, shared with the CLI:
//!
//! ```text
//! <store>/trees/<tree_id>/tree.json, session.json, expansions.jsonl
//! <store>/runs/<run_id>/manifest.json, records.jsonl, annotations.csv
//! <store>/fixtures/<fingerprint>.json
//! ```

mod error;
pub mod trees;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use scopetree::gateway::{FixtureStore, Gateway, GatewayError, GatewayMode, ModelParams};
use scopetree::hierarchy::{default_levels, NodeId, TopicTree, TreeDocument, DEFAULT_MAX_DEPTH};
use scopetree::metrics::{
    build_run_report, check_annotations, read_annotations_csv, upsert_annotations,
    write_annotations_csv, AnnotationRecord,
};
use scopetree::prompt::{PromptStrategy, DEFAULT_K};
use scopetree::run::{
    expand_node, CountPolicy, ExpandError, GenerationSettings, JsonlLog, RecordStatus, RunStore,
    FIXTURES_DIR,
};
use scopetree::testsuite::{SuiteDocument, TestSuite};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

pub use error::ApiError;
use trees::{check_id, internal, write_atomic, TreeStore, TreeView};

pub const TREES_DIR: &str = "trees";
pub const RUNS_DIR: &str = "runs";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot open store {path}: {source}")]
    Store {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

pub struct ServiceConfig {
    pub store: PathBuf,
    /// Mode used when an expand request does not name one.
    pub default_mode: GatewayMode,
    /// Gateway for `live` requests; `None` makes them fail with 400.
    pub live: Option<Gateway>,
    /// Gateway for `replay` requests; defaults to `<store>/fixtures`.
    pub replay: Option<Gateway>,
    pub params: ModelParams,
    /// Built UI bundle, served under `/`.
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            store: store.into(),
            default_mode: GatewayMode::Replay,
            live: None,
            replay: None,
            params: ModelParams::default(),
            ui_dir: None,
        }
    }
}

#[derive(Clone)]
struct AppState(Arc<Inner>);

struct Inner {
    trees: TreeStore,
    runs: RunStore,
    live: Option<Gateway>,
    replay: Gateway,
    default_mode: GatewayMode,
    params: ModelParams,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    /// Serializes writers per key; readers never take it.
    async fn write_lock(&self, key: String) -> tokio::sync::OwnedMutexGuard<()> {
        let lock = {
            let mut map = self.0.locks.lock().expect("lock map poisoned");
            map.entry(key).or_default().clone()
        };
        lock.lock_owned().await
    }

    fn gateway(&self, mode: Option<&str>) -> Result<Gateway, ApiError> {
        let mode = match mode {
            None => self.0.default_mode,
            Some(m) => m
                .parse()
                .map_err(|e: GatewayError| ApiError::BadRequest(e.to_string()))?,
        };
        match mode {
            GatewayMode::Replay => Ok(self.0.replay.clone()),
            GatewayMode::Live | GatewayMode::Record => self.0.live.clone().ok_or_else(|| {
                ApiError::BadRequest("live mode is not configured on this server".into())
            }),
        }
    }
}

pub fn router(config: ServiceConfig) -> Result<Router, ServiceError> {
    let open_err = |path: PathBuf| move |source| ServiceError::Store { path, source };
    let trees_dir = config.store.join(TREES_DIR);
    let trees = TreeStore::open(&trees_dir).map_err(open_err(trees_dir))?;
    let runs_dir = config.store.join(RUNS_DIR);
    let runs = RunStore::open(&runs_dir).map_err(|e| ServiceError::Store {
        path: runs_dir,
        source: std::io::Error::other(e.to_string()),
    })?;
    let replay = match config.replay {
        Some(g) => g,
        None => Gateway::replay(Arc::new(FixtureStore::open(
            config.store.join(FIXTURES_DIR),
        )?)),
    };
    let state = AppState(Arc::new(Inner {
        trees,
        runs,
        live: config.live,
        replay,
        default_mode: config.default_mode,
        params: config.params,
        locks: Mutex::new(HashMap::new()),
    }));

    let api = Router::new()
        .route("/levels", get(levels))
        .route("/trees", post(create_tree).get(list_trees))
        .route("/trees/{id}", get(get_tree))
        .route("/trees/{id}/expand", post(expand))
        .route("/trees/{id}/nodes/{node_id}", delete(prune_node))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/annotations", put(put_annotations))
        .route("/runs/{id}/report", get(run_report))
        .with_state(state);
    Ok(match config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    })
}

pub async fn serve(config: ServiceConfig, addr: &str) -> Result<(), ServiceError> {
    let app = router(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, app)
        .await
        .map_err(ServiceError::Serve)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("bad request body: {e}")))
}

async fn levels() -> Json<Value> {
    Json(json!({ "max_depth": DEFAULT_MAX_DEPTH, "levels": default_levels() }))
}

#[derive(Deserialize)]
struct RootBody {
    root_label: String,
    #[serde(default)]
    max_depth: Option<usize>,
}

fn tree_from_body(body: &[u8]) -> Result<TopicTree, ApiError> {
    let value: Value = parse_json(body)?;
    let bad = |e: serde_json::Error| ApiError::BadRequest(format!("bad tree document: {e}"));
    if value.get("root_label").is_some() {
        let b: RootBody = serde_json::from_value(value).map_err(bad)?;
        return Ok(TopicTree::with_max_depth(
            &b.root_label,
            b.max_depth.unwrap_or(DEFAULT_MAX_DEPTH),
        )?);
    }
    if value.get("name").is_some() {
        let doc: SuiteDocument = serde_json::from_value(value).map_err(bad)?;
        let suite =
            TestSuite::from_document(doc).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        return Ok(suite.tree().clone());
    }
    let doc: TreeDocument = serde_json::from_value(value).map_err(bad)?;
    let tree = TopicTree::from_document(&doc)?;
    let violations = tree.validate();
    if !violations.is_empty() {
        return Err(ApiError::InvalidTree(violations));
    }
    Ok(tree)
}

async fn create_tree(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let tree = tree_from_body(&body)?;
    let info = state.0.trees.create(&tree)?;
    let view = TreeView::new(&info, &tree);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "tree_id": info.tree_id, "tree": view })),
    )
        .into_response())
}

async fn list_trees(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!(state.0.trees.list()?)))
}

async fn get_tree(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TreeView>, ApiError> {
    let (info, tree) = state.0.trees.load(&id)?;
    Ok(Json(TreeView::new(&info, &tree)))
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Deserialize)]
struct ExpandBody {
    node_id: NodeId,
    strategy: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    count_policy: Option<String>,
    #[serde(default)]
    format_hint: bool,
}

async fn expand(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: ExpandBody = parse_json(&body)?;
    let strategy: PromptStrategy = body
        .strategy
        .parse()
        .map_err(|e: scopetree::prompt::PromptError| ApiError::BadRequest(e.to_string()))?;
    let count_policy = match &body.count_policy {
        Some(p) => p.parse::<CountPolicy>().map_err(ApiError::BadRequest)?,
        None => CountPolicy::Lenient,
    };
    let gateway = state.gateway(body.mode.as_deref())?;
    let settings = GenerationSettings {
        k: body.k,
        params: state.0.params.clone(),
        format_hint: body.format_hint,
        count_policy,
    };

    let _guard = state.write_lock(format!("tree/{id}")).await;
    let (mut info, tree) = state.0.trees.load(&id)?;
    let path = tree.path_of(body.node_id)?;
    let log_path = state.0.trees.expansions_path(&id);
    let (tree, expansion) = tokio::task::spawn_blocking(move || {
        let mut tree = tree;
        let sink = JsonlLog::open_append(log_path)?;
        let expansion = expand_node(&mut tree, &path, strategy, &settings, &gateway, &sink)?;
        Ok::<_, ExpandError>((tree, expansion))
    })
    .await
    .map_err(internal)??;

    if expansion.record.status == RecordStatus::TransportError {
        let body = json!({
            "error": expansion.record.error.clone().unwrap_or_default(),
            "record": expansion.record,
        });
        return Ok((StatusCode::BAD_GATEWAY, Json(body)).into_response());
    }

    state.0.trees.save(&mut info, &tree)?;
    Ok(Json(json!({
        "record": expansion.record,
        "new_node_ids": expansion.added,
        "rejected": expansion.rejected,
        "tree": TreeView::new(&info, &tree),
    }))
    .into_response())
}

async fn prune_node(
    State(state): State<AppState>,
    Path((id, node_id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let node: NodeId = node_id
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("bad node id {node_id:?}")))?;
    let _guard = state.write_lock(format!("tree/{id}")).await;
    let (mut info, mut tree) = state.0.trees.load(&id)?;
    let removed = tree.prune(node)?;
    state.0.trees.save(&mut info, &tree)?;
    Ok(Json(
        json!({ "removed": removed, "tree": TreeView::new(&info, &tree) }),
    ))
}

async fn list_runs(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!(state.0.runs.list_runs()?)))
}

async fn get_run(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    check_id(&id)?;
    let (manifest, records) = state.0.runs.load_run(&id)?;
    Ok(Json(json!({ "manifest": manifest, "records": records })))
}

fn load_annotations(state: &AppState, run_id: &str) -> Result<Vec<AnnotationRecord>, ApiError> {
    let path = state.0.runs.run_dir(run_id).join(ANNOTATIONS_FILE);
    match std::fs::File::open(&path) {
        Ok(f) => read_annotations_csv(f).map_err(|e| internal(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(internal(e)),
    }
}

fn annotations_from_body(
    headers: &HeaderMap,
    body: &[u8],
) -> Result<Vec<AnnotationRecord>, ApiError> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    if content_type.starts_with("text/csv") || content_type.starts_with("application/csv") {
        return read_annotations_csv(body).map_err(|e| ApiError::BadRequest(e.to_string()));
    }
    let value: Value = parse_json(body)?;
    let list = match value {
        Value::Object(mut obj) => obj.remove("annotations").unwrap_or(Value::Null),
        other => other,
    };
    serde_json::from_value(list).map_err(|e| ApiError::BadRequest(format!("bad annotations: {e}")))
}

async fn put_annotations(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    check_id(&id)?;
    let incoming = annotations_from_body(&headers, &body)?;
    let _guard = state.write_lock(format!("run/{id}")).await;
    let (_, records) = state.0.runs.load_run(&id)?;
    let mut all = load_annotations(&state, &id)?;
    let upserted = upsert_annotations(&mut all, &incoming);
    check_annotations(&records, &all).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let mut bytes = Vec::new();
    write_annotations_csv(&mut bytes, &all).map_err(internal)?;
    write_atomic(&state.0.runs.run_dir(&id).join(ANNOTATIONS_FILE), &bytes)?;
    Ok(Json(json!({ "upserted": upserted, "total": all.len() })))
}

async fn run_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    check_id(&id)?;
    let (manifest, records) = state.0.runs.load_run(&id)?;
    let annotations = load_annotations(&state, &id)?;
    let report = build_run_report(&manifest, &records, &annotations)?;
    Ok(Json(json!(report)))
}
