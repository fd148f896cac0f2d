//! End-to-end run over a project corpus: filter, correct, translate,
//! post-edit, score, quantize, route to review and price.
//!
//! A run holds a lease row in the store for its duration and writes all of
//! its results in one final transaction, so a failed run leaves the project
//! exactly as it found it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterSet;
use crate::domain::{FilterVerdict, QualityLevel, RejectReason, Segment, SentencePair, Stage, StageTraceEntry};
use crate::error::{Error, Result};
use crate::filtering::{judge_corpus, report_from_verdicts};
use crate::scoring::MetricRegistry;
use crate::store::{pair_key, Expect, ProjectRecord, RunLease, Store};
use crate::triage::{create_review_tasks, estimate_cost, quantize, CostSummary, ReviewTask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub ingested: u64,
    pub filtered_out: u64,
    pub gec_changed: u64,
    pub translated: u64,
    pub ape_changed: u64,
    pub scored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub project_id: String,
    pub stage_counts: StageCounts,
    /// Filter rejections by reason code.
    pub rejections: BTreeMap<RejectReason, u64>,
    pub level_histogram: BTreeMap<QualityLevel, u64>,
    pub cost: CostSummary,
    pub adapter_ids: BTreeMap<Stage, String>,
    pub started_at: String,
    pub finished_at: String,
    pub config_fingerprint: String,
}

impl PipelineReport {
    pub fn check_invariants(&self) -> Result<()> {
        let c = &self.stage_counts;
        if c.ingested != c.filtered_out + c.scored {
            return Err(Error::State(format!(
                "report: ingested {} != filtered_out {} + scored {}",
                c.ingested, c.filtered_out, c.scored
            )));
        }
        if self.rejections.values().sum::<u64>() != c.filtered_out {
            return Err(Error::State(
                "report: rejection counts do not sum to filtered_out".into(),
            ));
        }
        if self.level_histogram.values().sum::<u64>() != c.scored {
            return Err(Error::State("report: level histogram does not sum to scored".into()));
        }
        Ok(())
    }

    /// Copy with timestamps blanked, for reproducibility comparisons.
    pub fn without_timestamps(&self) -> PipelineReport {
        PipelineReport {
            started_at: String::new(),
            finished_at: String::new(),
            ..self.clone()
        }
    }
}

/// Everything a successful run writes back.
struct RunOutput {
    segments: Vec<Segment>,
    pairs: Vec<SentencePair>,
    tasks: Vec<ReviewTask>,
    report: PipelineReport,
}

fn set_progress(store: &Store, project_id: &str, stage: &str, progress: StageCounts) -> Result<()> {
    store.transaction(|tx| {
        let entry = tx
            .get::<RunLease>(project_id)
            .ok_or_else(|| Error::State(format!("run lease for `{project_id}` vanished")))?;
        let version = entry.version;
        let mut lease = entry.value.clone();
        lease.stage = stage.to_string();
        lease.progress = progress;
        tx.put(project_id, lease, Expect::Version(version))?;
        Ok(())
    })
}

fn execute(store: &Store, project: &ProjectRecord, adapters: &AdapterSet, started_at: String) -> Result<RunOutput> {
    let project_id = project.project_id.as_str();
    let config = &project.config;
    let mut segments = store.corpus(project_id).unwrap_or_default();
    let mut counts = StageCounts {
        ingested: segments.len() as u64,
        ..StageCounts::default()
    };

    let verdicts = judge_corpus(&segments, &config.filter_rules)?;
    let filter_report = report_from_verdicts(&verdicts);
    for (seg, verdict) in segments.iter_mut().zip(&verdicts) {
        seg.filter_verdict = Some(*verdict);
    }
    counts.filtered_out = filter_report.input_count - filter_report.retained_count;
    set_progress(store, project_id, "filter", counts)?;

    let retained: Vec<&Segment> = segments
        .iter()
        .filter(|s| s.filter_verdict == Some(FilterVerdict::Retained))
        .collect();
    let mut pairs: Vec<SentencePair> = retained.iter().map(|s| SentencePair::draft(s)).collect();

    let trace = |stage: Stage, changed: bool| StageTraceEntry {
        stage,
        adapter_id: adapters.get(stage).adapter_id().to_string(),
        changed,
    };

    let gec_in: Vec<(String, String)> = pairs.iter().map(|p| (p.segment_id.clone(), p.source.clone())).collect();
    let corrected = adapters.gec.correct(&gec_in)?;
    for (pair, out) in pairs.iter_mut().zip(corrected) {
        let changed = out != pair.source;
        counts.gec_changed += changed as u64;
        pair.source = out;
        pair.stage_trace.push(trace(Stage::Gec, changed));
    }
    set_progress(store, project_id, "gec", counts)?;

    let nmt_in: Vec<(String, String)> = pairs.iter().map(|p| (p.segment_id.clone(), p.source.clone())).collect();
    let translated = adapters.nmt.translate(&nmt_in)?;
    for (pair, out) in pairs.iter_mut().zip(translated) {
        pair.raw_target = out;
        pair.stage_trace.push(trace(Stage::Nmt, true));
    }
    counts.translated = pairs.len() as u64;
    set_progress(store, project_id, "nmt", counts)?;

    let ape_in: Vec<(String, String, String)> = pairs
        .iter()
        .map(|p| (p.segment_id.clone(), p.source.clone(), p.raw_target.clone()))
        .collect();
    let edited = adapters.ape.post_edit(&ape_in)?;
    for (pair, out) in pairs.iter_mut().zip(edited) {
        let changed = out != pair.raw_target;
        counts.ape_changed += changed as u64;
        pair.target = out;
        pair.stage_trace.push(trace(Stage::Ape, changed));
    }
    set_progress(store, project_id, "ape", counts)?;

    let registry = MetricRegistry::from_adapters(adapters)?;
    let qe_in: Vec<(String, String, String)> = pairs
        .iter()
        .map(|p| (p.segment_id.clone(), p.source.clone(), p.target.clone()))
        .collect();
    let scores = registry.score_batch(&qe_in)?;
    let scored: Vec<(String, f64)> = pairs
        .iter()
        .zip(&scores)
        .map(|(p, s)| (p.segment_id.clone(), s.final_score))
        .collect();
    let levels = quantize(&scored, &config.quantizer)?;
    for (pair, score) in pairs.iter_mut().zip(scores) {
        pair.level = Some(levels[&pair.segment_id]);
        pair.score = Some(score);
        pair.stage_trace.push(trace(Stage::Qe, false));
    }
    counts.scored = pairs.len() as u64;

    let live: HashSet<String> = store
        .tasks(project_id)
        .into_iter()
        .filter(|t| !t.state.is_terminal())
        .map(|t| t.pair_id)
        .collect();
    // Pairs are persisted as drafts first, then moved along the status graph.
    let drafts = pairs.clone();
    let tasks = create_review_tasks(project_id, &mut pairs, &config.pricing, &live)?;
    let cost = estimate_cost(&levels, &config.pricing)?;

    let mut level_histogram: BTreeMap<QualityLevel, u64> = QualityLevel::ALL.iter().map(|l| (*l, 0)).collect();
    for level in levels.values() {
        *level_histogram.get_mut(level).expect("all levels present") += 1;
    }

    let report = PipelineReport {
        project_id: project_id.to_string(),
        stage_counts: counts,
        rejections: filter_report.rejections,
        level_histogram,
        cost,
        adapter_ids: adapters.adapter_ids(),
        started_at,
        finished_at: crate::now_rfc3339(),
        config_fingerprint: config.fingerprint(),
    };
    report.check_invariants()?;

    let mut all_pairs = drafts;
    all_pairs.extend(pairs);
    Ok(RunOutput {
        segments,
        pairs: all_pairs,
        tasks,
        report,
    })
}

/// Runs the whole pipeline for a project with the given stage clients.
pub fn run_pipeline(store: &Store, project_id: &str, adapters: &AdapterSet) -> Result<PipelineReport> {
    let project = store.require_project(project_id)?;
    if !project.corpus_ingested {
        return Err(Error::State(format!("project `{project_id}` has no ingested corpus")));
    }
    if project.last_report.is_some() {
        return Err(Error::Conflict(format!("project `{project_id}` has already been run")));
    }
    let started_at = crate::now_rfc3339();
    store.transaction(|tx| {
        tx.put(
            project_id,
            RunLease {
                project_id: project_id.to_string(),
                started_at: started_at.clone(),
                stage: "starting".into(),
                progress: StageCounts::default(),
            },
            Expect::Absent,
        )
        .map_err(|e| match e {
            Error::Conflict(_) => Error::Conflict(format!("a run is already in progress for `{project_id}`")),
            other => other,
        })
    })?;

    let output = match execute(store, &project, adapters, started_at) {
        Ok(output) => output,
        Err(e) => {
            let _ = store.transaction(|tx| tx.delete::<RunLease>(project_id, Expect::Any));
            return Err(e);
        }
    };

    let committed = store.transaction(|tx| {
        tx.put(project_id, output.segments, Expect::Any)?;
        for pair in output.pairs {
            let key = pair_key(project_id, &pair.segment_id);
            tx.put(&key, pair, Expect::Any)?;
        }
        for task in output.tasks {
            let id = task.task_id.clone();
            tx.put(&id, task, Expect::Absent)?;
        }
        let version = tx
            .get::<ProjectRecord>(project_id)
            .ok_or_else(|| Error::NotFound(format!("project `{project_id}`")))?
            .version;
        let report = output.report.clone();
        tx.update::<ProjectRecord>(project_id, version, move |p| {
            p.last_report = Some(report);
            Ok(())
        })?;
        tx.delete::<RunLease>(project_id, Expect::Any)?;
        Ok(())
    });
    if let Err(e) = committed {
        let _ = store.transaction(|tx| tx.delete::<RunLease>(project_id, Expect::Any));
        return Err(e);
    }
    Ok(output.report)
}

/// Runs the pipeline with the adapters bound in the project's config.
pub fn run_project(store: &Store, project_id: &str) -> Result<PipelineReport> {
    let project = store.require_project(project_id)?;
    let adapters = AdapterSet::from_config(&project.config)?;
    run_pipeline(store, project_id, &adapters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreviewStage {
    Filter,
    Gec,
    Nmt,
    Ape,
    Qe,
}

impl PreviewStage {
    pub fn as_str(self) -> &'static str {
        match self {
            PreviewStage::Filter => "filter",
            PreviewStage::Gec => "gec",
            PreviewStage::Nmt => "nmt",
            PreviewStage::Ape => "ape",
            PreviewStage::Qe => "qe",
        }
    }

    /// Stages whose persisted output this preview reads.
    fn prerequisites(self) -> &'static [Stage] {
        match self {
            PreviewStage::Filter | PreviewStage::Gec => &[],
            PreviewStage::Nmt => &[Stage::Gec],
            PreviewStage::Ape => &[Stage::Gec, Stage::Nmt],
            PreviewStage::Qe => &[Stage::Gec, Stage::Nmt, Stage::Ape],
        }
    }
}

impl fmt::Display for PreviewStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreviewStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(PreviewStage::Filter),
            "gec" => Ok(PreviewStage::Gec),
            "nmt" => Ok(PreviewStage::Nmt),
            "ape" => Ok(PreviewStage::Ape),
            "qe" => Ok(PreviewStage::Qe),
            other => Err(Error::Validation(format!(
                "unknown stage `{other}` (filter|gec|nmt|ape|qe)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRow {
    pub id: String,
    pub before: String,
    pub after: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Runs one stage on the first `sample_size` segments without persisting.
pub fn preview_stage(
    store: &Store,
    project_id: &str,
    stage: PreviewStage,
    sample_size: usize,
    adapters: &AdapterSet,
) -> Result<Vec<PreviewRow>> {
    if sample_size == 0 {
        return Err(Error::Validation("sample size must be >= 1".into()));
    }
    let project = store.require_project(project_id)?;
    if !project.corpus_ingested {
        return Err(Error::State(format!("project `{project_id}` has no ingested corpus")));
    }
    let segments = store.corpus(project_id).unwrap_or_default();

    match stage {
        PreviewStage::Filter => {
            let verdicts = judge_corpus(&segments, &project.config.filter_rules)?;
            Ok(segments
                .iter()
                .zip(verdicts)
                .take(sample_size)
                .map(|(s, v)| PreviewRow {
                    id: s.id.clone(),
                    before: s.text.clone(),
                    after: match v {
                        FilterVerdict::Retained => "retained".into(),
                        FilterVerdict::Rejected(r) => format!("rejected:{r}"),
                    },
                    score: None,
                })
                .collect())
        }
        PreviewStage::Gec => {
            let verdicts = judge_corpus(&segments, &project.config.filter_rules)?;
            let items: Vec<(String, String)> = segments
                .iter()
                .zip(verdicts)
                .filter(|(_, v)| *v == FilterVerdict::Retained)
                .take(sample_size)
                .map(|(s, _)| (s.id.clone(), s.text.clone()))
                .collect();
            let out = adapters.gec.correct(&items)?;
            Ok(rows(items.into_iter(), out))
        }
        PreviewStage::Nmt | PreviewStage::Ape | PreviewStage::Qe => {
            let pairs = store.pairs(project_id);
            if project.last_report.is_none() {
                let missing: Vec<&str> = stage.prerequisites().iter().map(|s| s.as_str()).collect();
                return Err(Error::State(format!(
                    "preview of `{stage}` needs the output of {}, which has not been produced yet; run the pipeline first",
                    missing.join(", ")
                )));
            }
            let sample: Vec<SentencePair> = pairs.into_iter().take(sample_size).collect();
            match stage {
                PreviewStage::Nmt => {
                    let items: Vec<(String, String)> = sample
                        .iter()
                        .map(|p| (p.segment_id.clone(), p.source.clone()))
                        .collect();
                    let out = adapters.nmt.translate(&items)?;
                    Ok(rows(items.into_iter(), out))
                }
                PreviewStage::Ape => {
                    let items: Vec<(String, String, String)> = sample
                        .iter()
                        .map(|p| (p.segment_id.clone(), p.source.clone(), p.raw_target.clone()))
                        .collect();
                    let out = adapters.ape.post_edit(&items)?;
                    Ok(rows(items.into_iter().map(|(id, _, raw)| (id, raw)), out))
                }
                _ => {
                    let items: Vec<(String, String, String)> = sample
                        .iter()
                        .map(|p| (p.segment_id.clone(), p.source.clone(), p.target.clone()))
                        .collect();
                    let scores = MetricRegistry::from_adapters(adapters)?.score_batch(&items)?;
                    Ok(items
                        .into_iter()
                        .zip(scores)
                        .map(|((id, _, target), s)| PreviewRow {
                            id,
                            before: target,
                            after: s.final_score.to_string(),
                            score: Some(s.final_score),
                        })
                        .collect())
                }
            }
        }
    }
}

fn rows(inputs: impl Iterator<Item = (String, String)>, outputs: Vec<String>) -> Vec<PreviewRow> {
    inputs
        .zip(outputs)
        .map(|((id, before), after)| PreviewRow {
            id,
            before,
            after,
            score: None,
        })
        .collect()
}
