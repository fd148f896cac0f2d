//! Sentence-level quality scores and their aggregation.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::adapters::builtin::terminal_mark;
use crate::adapters::{AdapterSet, StageClient};
use crate::domain::{QualityScore, SentencePair};
use crate::error::{Error, Result, StageError};

const LEN_WEIGHT: f64 = 0.5;
const COPY_WEIGHT: f64 = 0.3;
const PUNCT_WEIGHT: f64 = 0.2;

/// The three penalty terms of the heuristic scorer, each in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QePenalties {
    pub len_penalty: f64,
    pub copy_rate: f64,
    pub punct_mismatch: f64,
}

impl QePenalties {
    pub fn measure(source: &str, target: &str) -> Self {
        let src_tokens: Vec<&str> = source.split_whitespace().collect();
        let tgt_tokens: Vec<&str> = target.split_whitespace().collect();

        let ratio = (tgt_tokens.len().max(1) as f64) / (src_tokens.len().max(1) as f64);
        let len_penalty = ratio.ln().abs().min(1.0);

        let src_types: HashSet<String> = src_tokens.iter().map(|t| t.to_lowercase()).collect();
        let tgt_types: HashSet<String> = tgt_tokens.iter().map(|t| t.to_lowercase()).collect();
        let shared = tgt_types.intersection(&src_types).count();
        let copy_rate = shared as f64 / tgt_types.len().max(1) as f64;

        let punct_mismatch = if terminal_mark(source) == terminal_mark(target) {
            0.0
        } else {
            1.0
        };

        QePenalties {
            len_penalty,
            copy_rate,
            punct_mismatch,
        }
    }

    pub fn combine(&self) -> f64 {
        let raw =
            1.0 - LEN_WEIGHT * self.len_penalty - COPY_WEIGHT * self.copy_rate - PUNCT_WEIGHT * self.punct_mismatch;
        raw.clamp(0.0, 1.0)
    }
}

/// Reference-free heuristic quality score in [0,1]. Penalizes length
/// mismatch, copying source tokens into the target, and disagreement on
/// the terminal punctuation mark. An empty target scores 0.
pub fn heuristic_qe(source: &str, target: &str) -> f64 {
    if target.trim().is_empty() {
        return 0.0;
    }
    QePenalties::measure(source, target).combine()
}

/// Mean of the metric scores as a validated [`QualityScore`].
pub fn aggregate_metrics(metric_scores: &BTreeMap<String, f64>) -> Result<QualityScore> {
    if metric_scores.is_empty() {
        return Err(Error::Validation("cannot aggregate an empty metric set".into()));
    }
    for (id, s) in metric_scores {
        if !(0.0..=1.0).contains(s) {
            return Err(Error::Validation(format!("metric `{id}` score {s} outside [0,1]")));
        }
    }
    let mean = metric_scores.values().sum::<f64>() / metric_scores.len() as f64;
    // Rounding can push the mean an ulp outside the value range.
    let lo = metric_scores.values().copied().fold(f64::INFINITY, f64::min);
    let hi = metric_scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let final_score = mean.clamp(lo, hi);
    Ok(QualityScore {
        metric_scores: metric_scores.clone(),
        final_score,
    })
}

/// A per-sentence quality metric. Scores are in [0,1], higher is better.
pub trait Metric: Send + Sync {
    fn score_batch(&self, items: &[(String, String, String)]) -> Result<Vec<f64>, StageError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicMetric;

impl Metric for HeuristicMetric {
    fn score_batch(&self, items: &[(String, String, String)]) -> Result<Vec<f64>, StageError> {
        Ok(items.iter().map(|(_, s, t)| heuristic_qe(s, t)).collect())
    }
}

impl Metric for StageClient {
    fn score_batch(&self, items: &[(String, String, String)]) -> Result<Vec<f64>, StageError> {
        self.estimate(items)
    }
}

#[derive(Clone)]
pub struct MetricRegistry {
    metrics: Vec<(String, Arc<dyn Metric>)>,
}

impl std::fmt::Debug for MetricRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.ids()).finish()
    }
}

impl MetricRegistry {
    pub fn new(metrics: Vec<(String, Arc<dyn Metric>)>) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::Validation("metric registry needs at least one metric".into()));
        }
        let mut seen = HashSet::new();
        for (id, _) in &metrics {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate metric id `{id}`")));
            }
        }
        Ok(MetricRegistry { metrics })
    }

    pub fn heuristic() -> Self {
        MetricRegistry {
            metrics: vec![("heuristic_qe".into(), Arc::new(HeuristicMetric))],
        }
    }

    /// The `qe` client plus any extra metric clients, keyed by adapter id.
    pub fn from_adapters(adapters: &AdapterSet) -> Result<Self> {
        let metrics = std::iter::once(&adapters.qe)
            .chain(&adapters.extra_metrics)
            .map(|c| (c.adapter_id().to_string(), Arc::new(c.clone()) as Arc<dyn Metric>))
            .collect();
        MetricRegistry::new(metrics)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.metrics.iter().map(|(id, _)| id.as_str())
    }

    /// Scores every `(id, source, target)` item with every metric. Any
    /// metric failure fails the whole batch.
    pub fn score_batch(&self, items: &[(String, String, String)]) -> Result<Vec<QualityScore>> {
        let mut per_item: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); items.len()];
        for (id, metric) in &self.metrics {
            let scores = metric.score_batch(items)?;
            if scores.len() != items.len() {
                return Err(Error::State(format!(
                    "metric `{id}` returned {} scores for {} items",
                    scores.len(),
                    items.len()
                )));
            }
            for (slot, s) in per_item.iter_mut().zip(scores) {
                slot.insert(id.clone(), s);
            }
        }
        per_item.iter().map(aggregate_metrics).collect()
    }
}

pub fn score_pair(pair: &SentencePair, registry: &MetricRegistry) -> Result<QualityScore> {
    let item = (pair.segment_id.clone(), pair.source.clone(), pair.target.clone());
    let mut scores = registry.score_batch(std::slice::from_ref(&item))?;
    Ok(scores.pop().expect("one item in, one score out"))
}
