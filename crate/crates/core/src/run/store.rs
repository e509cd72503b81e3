//! On-disk run directories and JSON-lines record logs.
//!
//! ```text
//! <root>/<run_id>/manifest.json
//! <root>/<run_id>/records.jsonl
//! <root>/<run_id>/records.partial.jsonl   (only while a run is in flight)
//! <root>/<run_id>/fixtures/               (only when recording)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::{GenerationRecord, RunManifest};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const PARTIAL_RECORDS_FILE: &str = "records.partial.jsonl";
pub const FIXTURES_DIR: &str = "fixtures";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("{file}: line {line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Destination for generation records as they are produced.
pub trait RecordSink: Send + Sync {
    fn append(&self, record: &GenerationRecord) -> Result<(), StoreError>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl RecordSink for NullSink {
    fn append(&self, _record: &GenerationRecord) -> Result<(), StoreError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<GenerationRecord>>);

impl MemorySink {
    pub fn records(&self) -> Vec<GenerationRecord> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl RecordSink for MemorySink {
    fn append(&self, record: &GenerationRecord) -> Result<(), StoreError> {
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(record.clone());
        Ok(())
    }
}

/// Append-only JSON-lines file, one value per line.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlLog {
    pub fn open_append(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(JsonlLog {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append_value<T: Serialize>(&self, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(value).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .map_err(io_err(&self.path))?;
        file.flush().map_err(io_err(&self.path))
    }
}

impl RecordSink for JsonlLog {
    fn append(&self, record: &GenerationRecord) -> Result<(), StoreError> {
        self.append_value(record)
    }
}

/// Reads a JSON-lines file. Blank lines are skipped; anything else that
/// does not parse is reported with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            file: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), StoreError> {
    let mut text = String::new();
    for v in values {
        text.push_str(&serde_json::to_string(v).expect("record serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// A directory holding one sub-directory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn create_run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let dir = self.create_run_dir(&manifest.run_id)?;
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Writes the manifest and the full, ordered record log.
    pub fn persist_run(
        &self,
        manifest: &RunManifest,
        records: &[GenerationRecord],
    ) -> Result<(), StoreError> {
        let dir = self.create_run_dir(&manifest.run_id)?;
        write_jsonl(&dir.join(RECORDS_FILE), records)?;
        self.write_manifest(manifest)
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        load_manifest_file(&self.run_dir(run_id), run_id)
    }

    pub fn load_run(
        &self,
        run_id: &str,
    ) -> Result<(RunManifest, Vec<GenerationRecord>), StoreError> {
        load_run_dir(&self.run_dir(run_id))
    }

    /// Manifests of every run in the store, oldest first.
    pub fn list_runs(&self) -> Result<Vec<RunManifest>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if !entry.path().join(MANIFEST_FILE).is_file() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            out.push(load_manifest_file(&entry.path(), &id)?);
        }
        out.sort_by(|a, b| {
            a.started_at
                .cmp(&b.started_at)
                .then_with(|| a.run_id.cmp(&b.run_id))
        });
        Ok(out)
    }
}

fn load_manifest_file(dir: &Path, run_id: &str) -> Result<RunManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(StoreError::NotFound(run_id.to_string()))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Loads a run from its directory (as written by [`RunStore::persist_run`]).
pub fn load_run_dir(dir: &Path) -> Result<(RunManifest, Vec<GenerationRecord>), StoreError> {
    let run_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = load_manifest_file(dir, &run_id)?;
    let records_path = dir.join(RECORDS_FILE);
    if !records_path.is_file() {
        return Err(StoreError::NotFound(run_id));
    }
    let records = read_jsonl(&records_path)?;
    Ok((manifest, records))
}
