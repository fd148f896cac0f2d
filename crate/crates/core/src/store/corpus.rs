//! Corpus ingestion and dataset export.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Expect, ProjectRecord, Store};
use crate::domain::{segment_id, PairStatus, QualityLevel, Segment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Txt,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "txt" => Ok(CorpusFormat::Txt),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Validation(format!(
                "unknown corpus format `{other}` (txt|jsonl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Tsv,
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "tsv" => Ok(DatasetFormat::Tsv),
            other => Err(Error::Validation(format!(
                "unknown dataset format `{other}` (jsonl|tsv)"
            ))),
        }
    }
}

impl DatasetFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            DatasetFormat::Jsonl => "application/x-ndjson",
            DatasetFormat::Tsv => "text/tab-separated-values",
        }
    }
}

/// One exported parallel-corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub source: String,
    pub target: String,
    pub score: f64,
    pub level: QualityLevel,
    pub status: PairStatus,
    pub metrics: BTreeMap<String, f64>,
    /// Editing price for the pair's level, in minor units.
    pub cost: u64,
}

fn decode_utf8(payload: &[u8]) -> Result<&str> {
    std::str::from_utf8(payload).map_err(|e| {
        Error::format_at(
            format!("payload is not valid UTF-8 (byte offset {})", e.valid_up_to()),
            "byte_offset",
            e.valid_up_to() as u64,
        )
    })
}

fn parse_txt(project_id: &str, lang: &str, text: &str) -> Vec<Segment> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line_no = i as u64 + 1;
            Segment::new(segment_id(project_id, line_no), line, lang, line_no)
        })
        .collect()
}

fn parse_jsonl(project_id: &str, lang: &str, text: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(line)
            .map_err(|e| Error::format_at(format!("line {line_no}: invalid JSON: {e}"), "line", line_no))?;
        let text = obj.get("text").and_then(Value::as_str).ok_or_else(|| {
            Error::format_at(
                format!("line {line_no}: missing string field \"text\""),
                "line",
                line_no,
            )
        })?;
        let id = match obj.get("id") {
            None | Some(Value::Null) => segment_id(project_id, line_no),
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(_) => {
                return Err(Error::format_at(
                    format!("line {line_no}: \"id\" must be a non-empty string"),
                    "line",
                    line_no,
                ));
            }
        };
        segments.push(Segment::new(id, text, lang, line_no));
    }
    Ok(segments)
}

/// Loads a mono corpus into a project, replacing any earlier corpus as long
/// as the project has never been run.
pub fn ingest_corpus(store: &Store, project_id: &str, payload: &[u8], format: CorpusFormat) -> Result<u64> {
    let project = store.require_project(project_id)?;
    let text = decode_utf8(payload)?;
    let lang = project.config.source_lang.as_str();
    let segments = match format {
        CorpusFormat::Txt => parse_txt(project_id, lang, text),
        CorpusFormat::Jsonl => parse_jsonl(project_id, lang, text)?,
    };
    let mut ids = HashSet::new();
    for s in &segments {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate segment id `{}` (line {})",
                s.id, s.origin_line
            )));
        }
    }
    let count = segments.len() as u64;
    store.transaction(|tx| {
        let entry = tx
            .get::<ProjectRecord>(project_id)
            .ok_or_else(|| Error::NotFound(format!("project `{project_id}`")))?;
        if entry.value.last_report.is_some() || tx.get::<super::RunLease>(project_id).is_some() {
            return Err(Error::Conflict(format!(
                "project `{project_id}` has already been run; its corpus can no longer be replaced"
            )));
        }
        let version = entry.version;
        tx.put(project_id, segments, Expect::Any)?;
        tx.update::<ProjectRecord>(project_id, version, |p| {
            p.corpus_ingested = true;
            Ok(())
        })?;
        Ok(())
    })?;
    Ok(count)
}

/// Writes the ingested mono corpus back out, one segment per line.
pub fn export_corpus(store: &Store, project_id: &str, format: CorpusFormat) -> Result<Vec<u8>> {
    store.require_project(project_id)?;
    let segments = store.corpus(project_id).unwrap_or_default();
    let mut out = Vec::new();
    for s in &segments {
        match format {
            CorpusFormat::Txt => out.extend_from_slice(s.text.as_bytes()),
            CorpusFormat::Jsonl => {
                let line = serde_json::json!({ "id": s.id, "text": s.text });
                out.extend_from_slice(line.to_string().as_bytes());
            }
        }
        out.push(b'\n');
    }
    Ok(out)
}

pub fn default_export_statuses() -> BTreeSet<PairStatus> {
    [PairStatus::AutoAccepted, PairStatus::Accepted, PairStatus::Edited].into()
}

fn tsv_field<'a>(id: &str, value: &'a str) -> Result<&'a str> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(Error::format_at(
            format!("pair {id} contains a tab or line break and cannot be written as TSV"),
            "id",
            id,
        ));
    }
    Ok(value)
}

/// Exports scored pairs whose status is in `include`, sorted by origin line.
pub fn export_dataset(
    store: &Store,
    project_id: &str,
    format: DatasetFormat,
    include: &BTreeSet<PairStatus>,
) -> Result<Vec<u8>> {
    let project = store.require_project(project_id)?;
    if project.last_report.is_none() {
        return Err(Error::State(format!(
            "project `{project_id}` has no completed run to export"
        )));
    }
    let pricing = &project.config.pricing;
    let mut out = Vec::new();
    for pair in store.pairs(project_id) {
        if !include.contains(&pair.status) {
            continue;
        }
        let (Some(score), Some(level)) = (&pair.score, pair.level) else {
            continue;
        };
        match format {
            DatasetFormat::Jsonl => {
                let record = DatasetRecord {
                    id: pair.segment_id.clone(),
                    source: pair.source.clone(),
                    target: pair.target.clone(),
                    score: score.final_score,
                    level,
                    status: pair.status,
                    metrics: score.metric_scores.clone(),
                    cost: pricing.per_segment.get(level),
                };
                out.extend_from_slice(&serde_json::to_vec(&record).expect("record serializes"));
            }
            DatasetFormat::Tsv => {
                let id = tsv_field(&pair.segment_id, &pair.segment_id)?;
                let row = [
                    id.to_string(),
                    tsv_field(id, &pair.source)?.to_string(),
                    tsv_field(id, &pair.target)?.to_string(),
                    score.final_score.to_string(),
                    level.to_string(),
                    pair.status.to_string(),
                ]
                .join("\t");
                out.extend_from_slice(row.as_bytes());
            }
        }
        out.push(b'\n');
    }
    Ok(out)
}

/// Parses a JSONL dataset export.
pub fn read_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>> {
    let text = decode_utf8(bytes)?;
    text.split('\n')
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format_at(format!("line {}: {e}", i + 1), "line", i as u64 + 1))
        })
        .collect()
}
