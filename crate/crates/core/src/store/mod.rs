//! Embedded single-file storage with versioned records.
//!
//! All state lives in memory and is made durable through an append-only
//! journal (`corpusforge.db`). Each committed transaction is one JSON line
//! holding the final value of every record it touched; it is fsynced before
//! the commit returns. A torn final line (crash mid-append) is discarded at
//! open. Long journals are compacted into a single snapshot line.
//!
//! Mutations happen inside [`Store::transaction`]: they are applied in
//! place under the writer lock and undone if the closure or the journal
//! append fails, so readers only ever see committed state.

mod corpus;
mod journal;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{ProjectConfig, Segment, SentencePair};
use crate::error::{Error, Result};
use crate::pipeline::{PipelineReport, StageCounts};
use crate::triage::ReviewTask;

pub use corpus::{
    default_export_statuses, export_corpus, export_dataset, ingest_corpus, read_dataset, CorpusFormat, DatasetFormat,
    DatasetRecord,
};
use journal::Journal;

/// On-disk format version, checked at open.
pub const FORMAT_VERSION: u32 = 1;
pub const DB_FILE: &str = "corpusforge.db";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry<T> {
    pub version: u64,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub project_id: String,
    pub name: String,
    pub config: ProjectConfig,
    pub created_at: String,
    pub corpus_ingested: bool,
    #[serde(default)]
    pub last_report: Option<PipelineReport>,
}

/// Lease held by an in-progress pipeline run. Progress counters are
/// committed as each stage completes so other readers can poll them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLease {
    pub project_id: String,
    pub started_at: String,
    pub stage: String,
    pub progress: StageCounts,
}

/// Record kinds and their tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableId {
    Projects,
    Corpora,
    Pairs,
    Tasks,
    Runs,
}

pub type Table<T> = BTreeMap<String, Entry<T>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub projects: Table<ProjectRecord>,
    pub corpora: Table<Vec<Segment>>,
    /// Keyed by [`pair_key`].
    pub pairs: Table<SentencePair>,
    pub tasks: Table<ReviewTask>,
    pub runs: Table<RunLease>,
}

pub trait Record: Serialize + DeserializeOwned + Clone + Send + Sync + 'static {
    const TABLE: TableId;
    fn table(t: &Tables) -> &Table<Self>;
    fn table_mut(t: &mut Tables) -> &mut Table<Self>;
    /// Mirrors the store version into the value, for records that carry one.
    fn stamp_version(&mut self, _version: u64) {}
    fn check_update(_old: Option<&Self>, _new: &Self) -> Result<()> {
        Ok(())
    }
}

impl Record for ProjectRecord {
    const TABLE: TableId = TableId::Projects;
    fn table(t: &Tables) -> &Table<Self> {
        &t.projects
    }
    fn table_mut(t: &mut Tables) -> &mut Table<Self> {
        &mut t.projects
    }
}

impl Record for Vec<Segment> {
    const TABLE: TableId = TableId::Corpora;
    fn table(t: &Tables) -> &Table<Self> {
        &t.corpora
    }
    fn table_mut(t: &mut Tables) -> &mut Table<Self> {
        &mut t.corpora
    }
}

impl Record for SentencePair {
    const TABLE: TableId = TableId::Pairs;
    fn table(t: &Tables) -> &Table<Self> {
        &t.pairs
    }
    fn table_mut(t: &mut Tables) -> &mut Table<Self> {
        &mut t.pairs
    }
    /// New pairs start as drafts; afterwards status only moves along the graph.
    fn check_update(old: Option<&Self>, new: &Self) -> Result<()> {
        new.validate()?;
        match old {
            None if new.status != crate::domain::PairStatus::Draft => Err(Error::Validation(format!(
                "pair {} must be created as draft, not {}",
                new.segment_id, new.status
            ))),
            Some(old) if old.status != new.status && !old.status.can_become(new.status) => Err(Error::State(format!(
                "pair {}: illegal status change {} -> {}",
                new.segment_id, old.status, new.status
            ))),
            _ => Ok(()),
        }
    }
}

impl Record for ReviewTask {
    const TABLE: TableId = TableId::Tasks;
    fn table(t: &Tables) -> &Table<Self> {
        &t.tasks
    }
    fn table_mut(t: &mut Tables) -> &mut Table<Self> {
        &mut t.tasks
    }
    fn stamp_version(&mut self, version: u64) {
        self.version = version;
    }
    fn check_update(_old: Option<&Self>, new: &Self) -> Result<()> {
        new.validate()
    }
}

impl Record for RunLease {
    const TABLE: TableId = TableId::Runs;
    fn table(t: &Tables) -> &Table<Self> {
        &t.runs
    }
    fn table_mut(t: &mut Tables) -> &mut Table<Self> {
        &mut t.runs
    }
}

/// Storage key of a pair: project id and segment id joined by NUL.
pub fn pair_key(project_id: &str, segment_id: &str) -> String {
    format!("{project_id}\u{0}{segment_id}")
}

fn pair_prefix(project_id: &str) -> String {
    format!("{project_id}\u{0}")
}

/// Version precondition for a write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Any,
    Absent,
    Version(u64),
}

type UndoFn = Box<dyn FnOnce(&mut Tables) + Send>;

/// Mutations staged inside [`Store::transaction`].
pub struct Tx<'a> {
    tables: &'a mut Tables,
    undo: Vec<UndoFn>,
    touched: Vec<(TableId, String)>,
}

impl Tx<'_> {
    pub fn tables(&self) -> &Tables {
        self.tables
    }

    pub fn get<R: Record>(&self, key: &str) -> Option<&Entry<R>> {
        R::table(self.tables).get(key)
    }

    fn check(&self, table: TableId, key: &str, current: Option<u64>, expect: Expect) -> Result<()> {
        match (expect, current) {
            (Expect::Any, _) | (Expect::Absent, None) => Ok(()),
            (Expect::Absent, Some(_)) => Err(Error::Conflict(format!("{table:?} record `{key}` already exists"))),
            (Expect::Version(_), None) => Err(Error::NotFound(format!("{table:?} record `{key}`"))),
            (Expect::Version(want), Some(have)) if want == have => Ok(()),
            (Expect::Version(want), Some(have)) => Err(Error::Conflict(format!(
                "{table:?} record `{key}` is at version {have}, expected {want}"
            ))),
        }
    }

    /// Writes `value`, returning its new version (0 for new records).
    pub fn put<R: Record>(&mut self, key: &str, mut value: R, expect: Expect) -> Result<u64> {
        let table = R::table(self.tables);
        let old = table.get(key);
        self.check(R::TABLE, key, old.map(|e| e.version), expect)?;
        R::check_update(old.map(|e| &e.value), &value)?;
        let version = old.map_or(0, |e| e.version + 1);
        value.stamp_version(version);
        let prev = R::table_mut(self.tables).insert(key.to_string(), Entry { version, value });
        self.record_undo::<R>(key, prev);
        Ok(version)
    }

    pub fn delete<R: Record>(&mut self, key: &str, expect: Expect) -> Result<()> {
        let current = R::table(self.tables).get(key).map(|e| e.version);
        self.check(R::TABLE, key, current, expect)?;
        let prev = R::table_mut(self.tables).remove(key);
        self.record_undo::<R>(key, prev);
        Ok(())
    }

    /// Compare-and-set: applies `mutation` to the record at `expected` version.
    pub fn update<R: Record>(
        &mut self,
        key: &str,
        expected: u64,
        mutation: impl FnOnce(&mut R) -> Result<()>,
    ) -> Result<u64> {
        let entry = self
            .get::<R>(key)
            .ok_or_else(|| Error::NotFound(format!("{:?} record `{key}`", R::TABLE)))?;
        self.check(R::TABLE, key, Some(entry.version), Expect::Version(expected))?;
        let mut value = entry.value.clone();
        mutation(&mut value)?;
        self.put(key, value, Expect::Version(expected))
    }

    fn record_undo<R: Record>(&mut self, key: &str, prev: Option<Entry<R>>) {
        let key = key.to_string();
        self.touched.push((R::TABLE, key.clone()));
        self.undo.push(Box::new(move |t: &mut Tables| {
            let table = R::table_mut(t);
            match prev {
                Some(p) => {
                    table.insert(key, p);
                }
                None => {
                    table.remove(&key);
                }
            }
        }));
    }

    fn rollback(self) {
        let Tx { tables, undo, .. } = self;
        for f in undo.into_iter().rev() {
            f(tables);
        }
    }
}

fn entry_json<R: Record>(tables: &Tables, key: &str) -> Option<Value> {
    R::table(tables)
        .get(key)
        .map(|e| serde_json::to_value(e).expect("records serialize"))
}

fn current_json(tables: &Tables, table: TableId, key: &str) -> Option<Value> {
    match table {
        TableId::Projects => entry_json::<ProjectRecord>(tables, key),
        TableId::Corpora => entry_json::<Vec<Segment>>(tables, key),
        TableId::Pairs => entry_json::<SentencePair>(tables, key),
        TableId::Tasks => entry_json::<ReviewTask>(tables, key),
        TableId::Runs => entry_json::<RunLease>(tables, key),
    }
}

pub struct Store {
    tables: RwLock<Tables>,
    journal: Mutex<Option<Journal>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

impl Store {
    /// Volatile store for tests and one-shot CLI runs.
    pub fn in_memory() -> Self {
        Store {
            tables: RwLock::new(Tables::default()),
            journal: Mutex::new(None),
            path: None,
        }
    }

    /// Opens (or creates) the store file inside `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(DB_FILE);
        let (journal, tables) = Journal::open(&path)?;
        Ok(Store {
            tables: RwLock::new(tables),
            journal: Mutex::new(Some(journal)),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn read<T>(&self, f: impl FnOnce(&Tables) -> T) -> T {
        f(&self.tables.read().expect("store lock poisoned"))
    }

    /// Runs `f` atomically: either every mutation is committed durably, or
    /// none is visible.
    pub fn transaction<T>(&self, f: impl FnOnce(&mut Tx<'_>) -> Result<T>) -> Result<T> {
        let mut journal = self.journal.lock().expect("journal lock poisoned");
        let mut tables = self.tables.write().expect("store lock poisoned");
        let mut tx = Tx {
            tables: &mut tables,
            undo: Vec::new(),
            touched: Vec::new(),
        };
        let out = match f(&mut tx) {
            Ok(out) => out,
            Err(e) => {
                tx.rollback();
                return Err(e);
            }
        };
        if let Some(journal) = journal.as_mut() {
            let mut seen = std::collections::HashSet::new();
            let ops: Vec<journal::Op> = tx
                .touched
                .iter()
                .filter(|k| seen.insert((*k).clone()))
                .map(|(table, key)| journal::Op {
                    table: *table,
                    key: key.clone(),
                    entry: current_json(tx.tables, *table, key),
                })
                .collect();
            if !ops.is_empty() {
                if let Err(e) = journal.append(&ops) {
                    tx.rollback();
                    return Err(e);
                }
            }
        }
        Ok(out)
    }

    /// Compare-and-set on one record.
    pub fn update<R: Record>(
        &self,
        key: &str,
        expected: u64,
        mutation: impl FnOnce(&mut R) -> Result<()>,
    ) -> Result<u64> {
        self.transaction(|tx| tx.update(key, expected, mutation))
    }

    /// Canonical serialization of the whole store, for snapshots and diffing.
    pub fn dump(&self) -> Vec<u8> {
        self.read(|t| serde_json::to_vec(t).expect("tables serialize"))
    }

    pub fn project(&self, project_id: &str) -> Option<ProjectRecord> {
        self.read(|t| t.projects.get(project_id).map(|e| e.value.clone()))
    }

    pub fn project_entry(&self, project_id: &str) -> Option<Entry<ProjectRecord>> {
        self.read(|t| t.projects.get(project_id).cloned())
    }

    pub fn projects(&self) -> Vec<ProjectRecord> {
        self.read(|t| t.projects.values().map(|e| e.value.clone()).collect())
    }

    pub fn require_project(&self, project_id: &str) -> Result<ProjectRecord> {
        self.project(project_id)
            .ok_or_else(|| Error::NotFound(format!("project `{project_id}`")))
    }

    pub fn corpus(&self, project_id: &str) -> Option<Vec<Segment>> {
        self.read(|t| t.corpora.get(project_id).map(|e| e.value.clone()))
    }

    /// Pairs of a project, ordered by origin line.
    pub fn pairs(&self, project_id: &str) -> Vec<SentencePair> {
        let prefix = pair_prefix(project_id);
        let mut pairs: Vec<SentencePair> = self.read(|t| {
            t.pairs
                .range(prefix.clone()..)
                .take_while(|(k, _)| k.starts_with(&prefix))
                .map(|(_, e)| e.value.clone())
                .collect()
        });
        pairs.sort_by(|a, b| {
            a.origin_line
                .cmp(&b.origin_line)
                .then_with(|| a.segment_id.cmp(&b.segment_id))
        });
        pairs
    }

    pub fn pair(&self, project_id: &str, segment_id: &str) -> Option<SentencePair> {
        self.read(|t| t.pairs.get(&pair_key(project_id, segment_id)).map(|e| e.value.clone()))
    }

    pub fn task(&self, task_id: &str) -> Option<ReviewTask> {
        self.read(|t| t.tasks.get(task_id).map(|e| e.value.clone()))
    }

    /// Tasks of a project in pair order.
    pub fn tasks(&self, project_id: &str) -> Vec<ReviewTask> {
        let mut tasks: Vec<ReviewTask> = self.read(|t| {
            t.tasks
                .values()
                .filter(|e| e.value.project_id == project_id)
                .map(|e| e.value.clone())
                .collect()
        });
        tasks.sort_by(|a, b| {
            a.origin_line
                .cmp(&b.origin_line)
                .then_with(|| a.task_id.cmp(&b.task_id))
        });
        tasks
    }

    pub fn run_lease(&self, project_id: &str) -> Option<RunLease> {
        self.read(|t| t.runs.get(project_id).map(|e| e.value.clone()))
    }

    pub fn create_project(&self, project_id: &str, name: &str, config: ProjectConfig) -> Result<ProjectRecord> {
        validate_project_id(project_id)?;
        if name.trim().is_empty() {
            return Err(Error::Validation("project name must not be empty".into()));
        }
        config.validate()?;
        let record = ProjectRecord {
            project_id: project_id.to_string(),
            name: name.to_string(),
            config,
            created_at: crate::now_rfc3339(),
            corpus_ingested: false,
            last_report: None,
        };
        self.transaction(|tx| tx.put(project_id, record.clone(), Expect::Absent))
            .map_err(|e| match e {
                Error::Conflict(_) => Error::Conflict(format!("project `{project_id}` already exists")),
                other => other,
            })?;
        Ok(record)
    }
}

/// Project ids are URL- and key-safe: 1-64 of `[A-Za-z0-9_-]`.
pub fn validate_project_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "project id `{id}` must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}
