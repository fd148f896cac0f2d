//! Quality quantization, labor-cost estimation and the review task lifecycle.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{PairStatus, PricingTable, QualityLevel, SentencePair};
use crate::error::{Error, Result};
use crate::scoring::{score_pair, MetricRegistry};
use crate::store::{pair_key, Expect, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerMode {
    /// Top `high_fraction` of the ranking is high, bottom `low_fraction` low.
    Percentile,
    /// `score >= high_threshold` is high, `score < low_threshold` low.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    pub mode: QuantizerMode,
    pub high_fraction: f64,
    pub low_fraction: f64,
    pub high_threshold: f64,
    pub low_threshold: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            mode: QuantizerMode::Percentile,
            high_fraction: 0.20,
            low_fraction: 0.20,
            high_threshold: 0.80,
            low_threshold: 0.20,
        }
    }
}

impl QuantizerConfig {
    pub fn absolute(low_threshold: f64, high_threshold: f64) -> Self {
        QuantizerConfig {
            mode: QuantizerMode::Absolute,
            low_threshold,
            high_threshold,
            ..QuantizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_half = |x: f64| (0.0..=0.5).contains(&x);
        if !in_half(self.high_fraction) || !in_half(self.low_fraction) {
            return Err(Error::Validation("quantizer fractions must lie in [0, 0.5]".into()));
        }
        if !matches!(
            self.low_threshold.partial_cmp(&self.high_threshold),
            Some(std::cmp::Ordering::Less | std::cmp::Ordering::Equal)
        ) {
            return Err(Error::Validation("low_threshold must not exceed high_threshold".into()));
        }
        Ok(())
    }
}

/// Maps each pair's final score to a level. Percentile ties break by
/// pair id, so the result does not depend on input order.
pub fn quantize(scored: &[(String, f64)], config: &QuantizerConfig) -> Result<BTreeMap<String, QualityLevel>> {
    config.validate()?;
    let mut seen = HashSet::with_capacity(scored.len());
    for (id, score) in scored {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate pair id `{id}`")));
        }
        if !(0.0..=1.0).contains(score) {
            return Err(Error::Validation(format!("pair `{id}` score {score} outside [0,1]")));
        }
    }

    let mut levels = BTreeMap::new();
    match config.mode {
        QuantizerMode::Absolute => {
            for (id, score) in scored {
                let level = if *score >= config.high_threshold {
                    QualityLevel::High
                } else if *score < config.low_threshold {
                    QualityLevel::Low
                } else {
                    QualityLevel::Middle
                };
                levels.insert(id.clone(), level);
            }
        }
        QuantizerMode::Percentile => {
            let mut ranked: Vec<&(String, f64)> = scored.iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let n = ranked.len();
            let high = (config.high_fraction * n as f64).floor() as usize;
            let low = (config.low_fraction * n as f64).floor() as usize;
            for (rank, (id, _)) in ranked.into_iter().enumerate() {
                let level = if rank < high {
                    QualityLevel::High
                } else if rank >= n - low {
                    QualityLevel::Low
                } else {
                    QualityLevel::Middle
                };
                levels.insert(id.clone(), level);
            }
        }
    }
    Ok(levels)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSummary {
    pub per_level_counts: BTreeMap<QualityLevel, u64>,
    pub per_level_cost: BTreeMap<QualityLevel, u64>,
    pub total_editing_cost: u64,
    pub from_scratch_cost: u64,
    pub estimated_savings: u64,
}

fn overflow() -> Error {
    Error::Validation("cost arithmetic overflows 64-bit minor units".into())
}

impl CostSummary {
    pub fn from_counts(counts: &BTreeMap<QualityLevel, u64>, pricing: &PricingTable) -> Result<Self> {
        pricing.validate()?;
        let mut summary = CostSummary::default();
        let mut total_count: u64 = 0;
        for level in QualityLevel::ALL {
            let count = counts.get(&level).copied().unwrap_or(0);
            let cost = count.checked_mul(pricing.per_segment.get(level)).ok_or_else(overflow)?;
            summary.per_level_counts.insert(level, count);
            summary.per_level_cost.insert(level, cost);
            summary.total_editing_cost = summary.total_editing_cost.checked_add(cost).ok_or_else(overflow)?;
            total_count = total_count.checked_add(count).ok_or_else(overflow)?;
        }
        summary.from_scratch_cost = total_count
            .checked_mul(pricing.from_scratch_per_segment)
            .ok_or_else(overflow)?;
        // Non-negative whenever the pricing table is valid.
        summary.estimated_savings = summary.from_scratch_cost - summary.total_editing_cost;
        Ok(summary)
    }
}

pub fn estimate_cost(levels: &BTreeMap<String, QualityLevel>, pricing: &PricingTable) -> Result<CostSummary> {
    let mut counts = BTreeMap::new();
    for level in levels.values() {
        *counts.entry(*level).or_insert(0u64) += 1;
    }
    CostSummary::from_counts(&counts, pricing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    InReview,
    ResolvedAccept,
    ResolvedEdit,
    ResolvedReject,
}

impl TaskState {
    pub const ALL: [TaskState; 5] = [
        TaskState::Pending,
        TaskState::InReview,
        TaskState::ResolvedAccept,
        TaskState::ResolvedEdit,
        TaskState::ResolvedReject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::InReview => "in_review",
            TaskState::ResolvedAccept => "resolved_accept",
            TaskState::ResolvedEdit => "resolved_edit",
            TaskState::ResolvedReject => "resolved_reject",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskState::ResolvedAccept | TaskState::ResolvedEdit | TaskState::ResolvedReject
        )
    }

    /// Pair status that mirrors this task state.
    pub fn pair_status(self) -> PairStatus {
        match self {
            TaskState::Pending => PairStatus::PendingReview,
            TaskState::InReview => PairStatus::InReview,
            TaskState::ResolvedAccept => PairStatus::Accepted,
            TaskState::ResolvedEdit => PairStatus::Edited,
            TaskState::ResolvedReject => PairStatus::Rejected,
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskState::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown task state `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TaskAction {
    Claim {
        #[serde(default)]
        assignee: Option<String>,
    },
    Release,
    Accept,
    Edit {
        new_target: String,
    },
    Reject,
}

impl TaskAction {
    pub fn name(&self) -> &'static str {
        match self {
            TaskAction::Claim { .. } => "claim",
            TaskAction::Release => "release",
            TaskAction::Accept => "accept",
            TaskAction::Edit { .. } => "edit",
            TaskAction::Reject => "reject",
        }
    }
}

/// The transition table. `None` means the action is illegal in `state`.
pub fn next_state(state: TaskState, action: &TaskAction) -> Option<TaskState> {
    use TaskState::*;
    match (state, action) {
        (Pending, TaskAction::Claim { .. }) => Some(InReview),
        (InReview, TaskAction::Release) => Some(Pending),
        (InReview, TaskAction::Accept) => Some(ResolvedAccept),
        (InReview, TaskAction::Edit { .. }) => Some(ResolvedEdit),
        (InReview, TaskAction::Reject) => Some(ResolvedReject),
        _ => None,
    }
}

/// Priced unit of human review for one middle- or low-level pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub project_id: String,
    pub pair_id: String,
    pub origin_line: u64,
    pub level: QualityLevel,
    pub price: u64,
    pub state: TaskState,
    pub assignee: Option<String>,
    pub edited_target: Option<String>,
    pub version: u64,
}

pub fn task_id(project_id: &str, origin_line: u64) -> String {
    format!("{project_id}~{origin_line}")
}

fn check_edit_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::Validation("edited target must not be empty".into()));
    }
    if text.contains(['\t', '\n', '\r']) {
        return Err(Error::Validation(
            "edited target must be a single line without tabs".into(),
        ));
    }
    Ok(())
}

impl ReviewTask {
    pub fn validate(&self) -> Result<()> {
        if self.level == QualityLevel::High {
            return Err(Error::Validation(format!(
                "task {}: high pairs are never reviewed",
                self.task_id
            )));
        }
        let has_edit = self.edited_target.as_deref().is_some_and(|t| !t.trim().is_empty());
        if has_edit != (self.state == TaskState::ResolvedEdit) || (self.edited_target.is_some() && !has_edit) {
            return Err(Error::Validation(format!(
                "task {}: edited_target must be non-empty exactly when resolved by edit",
                self.task_id
            )));
        }
        Ok(())
    }

    /// Pure transition; the caller persists the result.
    pub fn apply(&self, action: &TaskAction) -> Result<ReviewTask> {
        let next = next_state(self.state, action).ok_or_else(|| {
            Error::State(format!(
                "task {}: `{}` is not allowed while {}",
                self.task_id,
                action.name(),
                self.state
            ))
        })?;
        let mut task = self.clone();
        task.state = next;
        match action {
            TaskAction::Claim { assignee } => task.assignee = assignee.clone(),
            TaskAction::Release => task.assignee = None,
            TaskAction::Edit { new_target } => {
                check_edit_text(new_target)?;
                task.edited_target = Some(new_target.clone());
            }
            TaskAction::Accept | TaskAction::Reject => {}
        }
        Ok(task)
    }
}

/// Routes scored pairs: high pairs become `auto_accepted`, middle and low
/// pairs become `pending_review` with one priced task each.
pub fn create_review_tasks(
    project_id: &str,
    pairs: &mut [SentencePair],
    pricing: &PricingTable,
    live_tasks: &HashSet<String>,
) -> Result<Vec<ReviewTask>> {
    pricing.validate()?;
    let mut tasks = Vec::new();
    for pair in pairs.iter_mut() {
        let level = pair
            .level
            .ok_or_else(|| Error::Validation(format!("pair {} has no level", pair.segment_id)))?;
        if level == QualityLevel::High {
            pair.transition(PairStatus::AutoAccepted)?;
            continue;
        }
        if live_tasks.contains(&pair.segment_id) {
            return Err(Error::Conflict(format!(
                "pair {} already has a live review task",
                pair.segment_id
            )));
        }
        pair.transition(PairStatus::PendingReview)?;
        tasks.push(ReviewTask {
            task_id: task_id(project_id, pair.origin_line),
            project_id: project_id.to_string(),
            pair_id: pair.segment_id.clone(),
            origin_line: pair.origin_line,
            level,
            price: pricing.per_segment.get(level),
            state: TaskState::Pending,
            assignee: None,
            edited_target: None,
            version: 0,
        });
    }
    Ok(tasks)
}

/// Applies a reviewer action with optimistic concurrency and mirrors the
/// result onto the pair. Edits re-score the pair with `registry`.
pub fn transition_task(
    store: &Store,
    registry: &MetricRegistry,
    task_id: &str,
    action: TaskAction,
    expected_version: u64,
) -> Result<ReviewTask> {
    let current = store
        .task(task_id)
        .ok_or_else(|| Error::NotFound(format!("task `{task_id}`")))?;
    if current.version != expected_version {
        return Err(Error::Conflict(format!(
            "task {task_id} is at version {}, expected {expected_version}",
            current.version
        )));
    }
    // Validate before the (possibly remote) re-scoring call.
    current.apply(&action)?;

    let fresh_score = match &action {
        TaskAction::Edit { new_target } => {
            let mut pair = store
                .pair(&current.project_id, &current.pair_id)
                .ok_or_else(|| Error::NotFound(format!("pair `{}`", current.pair_id)))?;
            pair.target = new_target.clone();
            Some(score_pair(&pair, registry)?)
        }
        _ => None,
    };

    store.transaction(|tx| {
        let entry = tx
            .get::<ReviewTask>(task_id)
            .ok_or_else(|| Error::NotFound(format!("task `{task_id}`")))?;
        if entry.version != expected_version {
            return Err(Error::Conflict(format!(
                "task {task_id} is at version {}, expected {expected_version}",
                entry.version
            )));
        }
        let mut task = entry.value.apply(&action)?;
        let key = pair_key(&task.project_id, &task.pair_id);
        let pair_entry = tx
            .get::<SentencePair>(&key)
            .ok_or_else(|| Error::NotFound(format!("pair `{}`", task.pair_id)))?;
        let pair_version = pair_entry.version;
        let mut pair = pair_entry.value.clone();
        if let (TaskAction::Edit { new_target }, Some(score)) = (&action, &fresh_score) {
            pair.target = new_target.clone();
            pair.score = Some(score.clone());
        }
        pair.transition(task.state.pair_status())?;
        tx.put(&key, pair, Expect::Version(pair_version))?;
        task.version = tx.put(task_id, task.clone(), Expect::Version(expected_version))?;
        Ok(task)
    })
}
