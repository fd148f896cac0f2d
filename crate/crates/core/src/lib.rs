//! Engine for turning a mono corpus into a quality-graded parallel corpus.
//!
//! The flow is: rule-based [`filtering`], grammar correction, machine
//! translation and post-editing through pluggable [`adapters`], sentence
//! [`scoring`], and [`triage`] into high/middle/low levels with priced
//! human review for everything below high. [`pipeline`] drives a run and
//! [`store`] keeps projects, pairs and review tasks durable.

pub mod adapters;
pub mod domain;
pub mod error;
pub mod filtering;
pub mod pipeline;
pub mod scoring;
pub mod store;
pub mod triage;

pub use adapters::{AdapterBinding, AdapterKind, AdapterSet, StageAdapter, StageClient};
pub use domain::{
    level_order, FilterVerdict, PairStatus, PricingTable, ProjectConfig, QualityLevel, QualityScore, RejectReason,
    Segment, SentencePair, Stage,
};
pub use error::{Error, ErrorCode, Result, StageError};
pub use filtering::{filter_corpus, normalize_for_dedup, FilterReport, FilterRuleSet};
pub use pipeline::{preview_stage, run_pipeline, run_project, PipelineReport, PreviewRow, PreviewStage, StageCounts};
pub use scoring::{aggregate_metrics, heuristic_qe, score_pair, MetricRegistry};
pub use store::{ProjectRecord, Store};
pub use triage::{
    create_review_tasks, estimate_cost, quantize, transition_task, CostSummary, QuantizerConfig, QuantizerMode,
    ReviewTask, TaskAction, TaskState,
};

/// 100-line English sample corpus bundled with the crate.
pub const SAMPLE_CORPUS: &str = include_str!("../fixtures/sample_corpus.txt");

/// Current UTC time, RFC 3339 with millisecond precision.
pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
