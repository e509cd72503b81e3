//! Elicitation: single-node expansion and full experiment runs.
//!
//! Experiments never mutate the suite tree. Every (strategy, target) pair
//! gets exactly one completion, and the finished log is sorted by strategy
//! index then suite pre-order, whatever order the calls completed in.

mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::gateway::{
    parse_subtopics, FixtureStore, Gateway, GatewayMode, ModelParams, ParseError,
};
use crate::hierarchy::{HierarchyError, NodeId, Rejection, TopicPath, TopicTree};
use crate::prompt::{render_prompt, PromptError, PromptRequest, PromptStrategy, DEFAULT_K};
use crate::testsuite::TestSuite;

pub use store::{
    load_run_dir, read_jsonl, write_jsonl, JsonlLog, MemorySink, NullSink, RecordSink, RunStore,
    StoreError, FIXTURES_DIR, MANIFEST_FILE, PARTIAL_RECORDS_FILE, RECORDS_FILE,
};

pub const DEFAULT_PARALLELISM: usize = 4;

/// `run_id` carried by records produced through [`expand_node`].
pub const INTERACTIVE_RUN_ID: &str = "interactive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    CountMismatch,
    ParseFailure,
    TransportError,
}

impl RecordStatus {
    pub const ALL: [RecordStatus; 4] = [
        RecordStatus::Ok,
        RecordStatus::CountMismatch,
        RecordStatus::ParseFailure,
        RecordStatus::TransportError,
    ];
}

/// What to do when a completion lists a different number of items than asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountPolicy {
    /// Keep nothing.
    Strict,
    /// Keep whatever parsed.
    Lenient,
}

impl FromStr for CountPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(CountPolicy::Strict),
            "lenient" => Ok(CountPolicy::Lenient),
            other => Err(format!("unknown count policy {other:?}")),
        }
    }
}

impl fmt::Display for CountPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountPolicy::Strict => "strict",
            CountPolicy::Lenient => "lenient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub k: usize,
    pub params: ModelParams,
    #[serde(default)]
    pub format_hint: bool,
    pub count_policy: CountPolicy,
}

impl GenerationSettings {
    /// Strict counting, as used for experiments.
    pub fn experiment() -> Self {
        GenerationSettings {
            k: DEFAULT_K,
            params: ModelParams::default(),
            format_hint: false,
            count_policy: CountPolicy::Strict,
        }
    }

    /// Lenient counting, as used for interactive expansion.
    pub fn interactive() -> Self {
        GenerationSettings {
            count_policy: CountPolicy::Lenient,
            ..Self::experiment()
        }
    }
}

/// One completion call and what came of it.
///
/// `subtopics` always holds whatever was parsed, even when the status is
/// `count_mismatch`; only `ok` records feed annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub record_id: String,
    pub run_id: String,
    pub target_path: TopicPath,
    pub strategy: PromptStrategy,
    pub k: usize,
    pub prompt: String,
    #[serde(default)]
    pub format_hint: bool,
    pub raw_response: String,
    pub subtopics: Vec<String>,
    pub params: ModelParams,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timestamp: DateTime<Utc>,
}

impl GenerationRecord {
    /// Level of the generated subtopics.
    pub fn output_level(&self) -> usize {
        self.target_path.level() + 1
    }

    /// Copy with ids and timestamp blanked, for determinism checks.
    pub fn without_volatile(&self) -> GenerationRecord {
        GenerationRecord {
            record_id: String::new(),
            run_id: String::new(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            ..self.clone()
        }
    }
}

/// Renders, completes, and parses one prompt. Gateway and parse failures
/// become the record's status.
pub fn generate(
    run_id: &str,
    path: &TopicPath,
    strategy: PromptStrategy,
    settings: &GenerationSettings,
    gateway: &Gateway,
) -> Result<GenerationRecord, PromptError> {
    let request = PromptRequest::new(strategy, path.clone())
        .with_k(settings.k)
        .with_format_hint(settings.format_hint);
    let prompt = render_prompt(&request)?;
    let mut record = GenerationRecord {
        record_id: Uuid::new_v4().to_string(),
        run_id: run_id.to_string(),
        target_path: path.clone(),
        strategy,
        k: settings.k,
        prompt,
        format_hint: settings.format_hint,
        raw_response: String::new(),
        subtopics: Vec::new(),
        params: settings.params.clone(),
        status: RecordStatus::Ok,
        error: None,
        timestamp: Utc::now(),
    };
    match gateway.complete(&record.prompt, &settings.params) {
        Err(e) => {
            record.status = RecordStatus::TransportError;
            record.error = Some(e.to_string());
        }
        Ok(raw) => {
            record.raw_response = raw;
            match parse_subtopics(&record.raw_response, settings.k) {
                Ok(items) => record.subtopics = items,
                Err(e @ ParseError::CountMismatch { .. }) => {
                    record.status = RecordStatus::CountMismatch;
                    record.error = Some(e.to_string());
                    if let ParseError::CountMismatch { parsed, .. } = e {
                        record.subtopics = parsed;
                    }
                }
                Err(e @ ParseError::NoItems { .. }) => {
                    record.status = RecordStatus::ParseFailure;
                    record.error = Some(e.to_string());
                }
            }
        }
    }
    record.timestamp = Utc::now();
    Ok(record)
}

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub record: GenerationRecord,
    pub added: Vec<NodeId>,
    pub rejected: Vec<Rejection>,
}

/// Generates subtopics for the node at `path` and attaches them to `tree`.
///
/// The record goes to `sink` whatever its status. Completion problems show
/// up in the record, never as an `Err`.
pub fn expand_node(
    tree: &mut TopicTree,
    path: &TopicPath,
    strategy: PromptStrategy,
    settings: &GenerationSettings,
    gateway: &Gateway,
    sink: &dyn RecordSink,
) -> Result<Expansion, ExpandError> {
    let node = tree.resolve(path)?;
    let level = path.level();
    if level >= tree.max_depth() {
        return Err(HierarchyError::DepthExceeded {
            level,
            max_depth: tree.max_depth(),
        }
        .into());
    }
    // Use the stored labels so the prompt matches the tree verbatim.
    let path = tree.path_of(node)?;
    let record = generate(INTERACTIVE_RUN_ID, &path, strategy, settings, gateway)?;
    sink.append(&record)?;

    let keep = matches!(
        (record.status, settings.count_policy),
        (RecordStatus::Ok, _) | (RecordStatus::CountMismatch, CountPolicy::Lenient)
    );
    let (added, rejected) = if keep {
        match tree.add_children_at(node, &record.subtopics) {
            Ok(out) => (out.added, out.rejected),
            Err(HierarchyError::AllRejected(rejected)) => (Vec::new(), rejected),
            Err(e) => return Err(e.into()),
        }
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Expansion {
        record,
        added,
        rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub suite_name: String,
    pub suite_hash: String,
    pub max_depth: usize,
    pub strategies: Vec<PromptStrategy>,
    pub k: usize,
    pub params: ModelParams,
    pub format_hint: bool,
    pub count_policy: CountPolicy,
    pub mode: GatewayMode,
    pub parallelism: usize,
    pub prompt_targets: usize,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status_counts: BTreeMap<RecordStatus, usize>,
}

impl RunManifest {
    pub fn total_records(&self) -> usize {
        self.status_counts.values().sum()
    }

    pub fn is_complete(&self) -> bool {
        self.finished_at.is_some()
            && self.total_records() == self.strategies.len() * self.prompt_targets
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub strategies: Vec<PromptStrategy>,
    pub settings: GenerationSettings,
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategies: PromptStrategy::ALL.to_vec(),
            settings: GenerationSettings::experiment(),
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("run aborted: {0}")]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub records: Vec<GenerationRecord>,
}

/// Fixture directory for a recording run inside the run store.
pub fn run_fixture_store(store: &RunStore, run_id: &str) -> Result<FixtureStore, RunError> {
    FixtureStore::open(store.run_dir(run_id).join(FIXTURES_DIR))
        .map_err(|e| RunError::Config(e.to_string()))
}

/// Runs every strategy against every prompt target of `suite`.
pub fn run_experiment(
    suite: &TestSuite,
    config: &ExperimentConfig,
    gateway: &Gateway,
    store: &RunStore,
) -> Result<RunOutcome, RunError> {
    run_experiment_with_id(suite, config, gateway, store, &Uuid::new_v4().to_string())
}

pub fn run_experiment_with_id(
    suite: &TestSuite,
    config: &ExperimentConfig,
    gateway: &Gateway,
    store: &RunStore,
    run_id: &str,
) -> Result<RunOutcome, RunError> {
    if config.parallelism == 0 {
        return Err(RunError::Config("parallelism must be at least 1".into()));
    }
    if config.strategies.is_empty() {
        return Err(RunError::Config("no strategies selected".into()));
    }
    if config.settings.k == 0 {
        return Err(RunError::Config("k must be at least 1".into()));
    }
    config
        .settings
        .params
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;

    let targets = suite.prompt_targets();
    let jobs: Vec<(PromptStrategy, &TopicPath)> = config
        .strategies
        .iter()
        .flat_map(|s| targets.iter().map(move |t| (*s, t)))
        .collect();
    // Render up front so a bad template aborts before any call goes out.
    for (strategy, target) in &jobs {
        render_prompt(&PromptRequest::new(*strategy, (*target).clone()).with_k(config.settings.k))?;
    }

    let mut manifest = RunManifest {
        run_id: run_id.to_string(),
        suite_name: suite.name().to_string(),
        suite_hash: suite.content_hash(),
        max_depth: suite.max_depth(),
        strategies: config.strategies.clone(),
        k: config.settings.k,
        params: config.settings.params.clone(),
        format_hint: config.settings.format_hint,
        count_policy: config.settings.count_policy,
        mode: gateway.mode(),
        parallelism: config.parallelism,
        prompt_targets: targets.len(),
        started_at: Utc::now(),
        finished_at: None,
        status_counts: BTreeMap::new(),
    };
    store.write_manifest(&manifest)?;
    let partial = JsonlLog::open_append(store.run_dir(run_id).join(PARTIAL_RECORDS_FILE))?;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut slots: Vec<Option<GenerationRecord>> = vec![None; jobs.len()];
    let mut failure: Option<StoreError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, GenerationRecord)>();
        for _ in 0..config.parallelism.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let (jobs, next, abort) = (&jobs, &next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some((strategy, target)) = jobs.get(idx) else {
                    break;
                };
                let record = generate(run_id, target, *strategy, &config.settings, gateway)
                    .expect("prompt rendered during validation");
                if tx.send((idx, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer for the in-flight log.
        for (idx, record) in rx {
            if failure.is_some() {
                continue;
            }
            match partial.append(&record) {
                Ok(()) => slots[idx] = Some(record),
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure = Some(e);
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }

    let records: Vec<GenerationRecord> = slots
        .into_iter()
        .map(|r| r.expect("every job produced a record"))
        .collect();
    for r in &records {
        *manifest.status_counts.entry(r.status).or_insert(0) += 1;
    }
    manifest.finished_at = Some(Utc::now());
    store.persist_run(&manifest, &records)?;
    let _ = std::fs::remove_file(partial.path());
    Ok(RunOutcome { manifest, records })
}
