//! Records shared by every stage of the corpus pipeline.
//!
//! All types here are plain values. State changes on stored records go
//! through [`crate::store`] transactions; status changes on pairs must
//! follow [`PairStatus::can_become`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::AdapterBinding;
use crate::error::{Error, Result};
use crate::filtering::FilterRuleSet;
use crate::triage::QuantizerConfig;

/// Tolerance used when checking that a stored final score is the metric mean.
pub const MEAN_TOLERANCE: f64 = 1e-9;

/// Model-backed pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gec,
    Nmt,
    Ape,
    Qe,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Gec, Stage::Nmt, Stage::Ape, Stage::Qe];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Gec => "gec",
            Stage::Nmt => "nmt",
            Stage::Ape => "ape",
            Stage::Qe => "qe",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gec" => Ok(Stage::Gec),
            "nmt" => Ok(Stage::Nmt),
            "ape" => Ok(Stage::Ape),
            "qe" => Ok(Stage::Qe),
            other => Err(Error::Validation(format!("unknown stage `{other}`"))),
        }
    }
}

/// Three-way quantized quality. Declaration order gives `Low < Middle < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLevel {
    Low,
    Middle,
    High,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 3] = [QualityLevel::Low, QualityLevel::Middle, QualityLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLevel::Low => "low",
            QualityLevel::Middle => "middle",
            QualityLevel::High => "high",
        }
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(QualityLevel::Low),
            "middle" => Ok(QualityLevel::Middle),
            "high" => Ok(QualityLevel::High),
            other => Err(Error::Validation(format!("unknown quality level `{other}`"))),
        }
    }
}

pub fn level_order(a: QualityLevel, b: QualityLevel) -> Ordering {
    a.cmp(&b)
}

/// Machine-readable filter rejection reasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooShort,
    TooLong,
    TooManyTokens,
    Duplicate,
    NoLetters,
    WrongScript,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Empty => "empty",
            RejectReason::TooShort => "too_short",
            RejectReason::TooLong => "too_long",
            RejectReason::TooManyTokens => "too_many_tokens",
            RejectReason::Duplicate => "duplicate",
            RejectReason::NoLetters => "no_letters",
            RejectReason::WrongScript => "wrong_script",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum FilterVerdict {
    Retained,
    Rejected(RejectReason),
}

/// One source-language sentence of the ingested mono corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub origin_line: u64,
    /// `None` until the corpus has been filtered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_verdict: Option<FilterVerdict>,
}

impl Segment {
    pub fn new(id: impl Into<String>, text: impl Into<String>, lang: impl Into<String>, origin_line: u64) -> Self {
        Segment {
            id: id.into(),
            text: text.into(),
            lang: lang.into(),
            origin_line,
            filter_verdict: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.origin_line == 0 {
            return Err(Error::Validation(format!(
                "segment {}: origin_line must be >= 1",
                self.id
            )));
        }
        if self.filter_verdict == Some(FilterVerdict::Retained) && self.text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "segment {}: retained text is blank",
                self.id
            )));
        }
        Ok(())
    }
}

/// Default identifier for a segment: `<project>:<origin_line>`.
pub fn segment_id(project_id: &str, origin_line: u64) -> String {
    format!("{project_id}:{origin_line}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTraceEntry {
    pub stage: Stage,
    pub adapter_id: String,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub metric_scores: BTreeMap<String, f64>,
    #[serde(rename = "final")]
    pub final_score: f64,
}

impl QualityScore {
    pub fn validate(&self) -> Result<()> {
        if self.metric_scores.is_empty() {
            return Err(Error::Validation("quality score has no metrics".into()));
        }
        for (id, s) in &self.metric_scores {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::Validation(format!("metric `{id}` score {s} outside [0,1]")));
            }
        }
        let mean = self.metric_scores.values().sum::<f64>() / self.metric_scores.len() as f64;
        if (mean - self.final_score).abs() > MEAN_TOLERANCE {
            return Err(Error::Validation(format!(
                "final score {} is not the metric mean {mean}",
                self.final_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Draft,
    AutoAccepted,
    PendingReview,
    InReview,
    Accepted,
    Edited,
    Rejected,
}

impl PairStatus {
    pub const ALL: [PairStatus; 7] = [
        PairStatus::Draft,
        PairStatus::AutoAccepted,
        PairStatus::PendingReview,
        PairStatus::InReview,
        PairStatus::Accepted,
        PairStatus::Edited,
        PairStatus::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::Draft => "draft",
            PairStatus::AutoAccepted => "auto_accepted",
            PairStatus::PendingReview => "pending_review",
            PairStatus::InReview => "in_review",
            PairStatus::Accepted => "accepted",
            PairStatus::Edited => "edited",
            PairStatus::Rejected => "rejected",
        }
    }

    /// The status graph. Self-loops are not transitions.
    pub fn can_become(self, next: PairStatus) -> bool {
        use PairStatus::*;
        matches!(
            (self, next),
            (Draft, AutoAccepted)
                | (Draft, PendingReview)
                | (PendingReview, InReview)
                | (InReview, PendingReview)
                | (InReview, Accepted)
                | (InReview, Edited)
                | (InReview, Rejected)
        )
    }
}

impl fmt::Display for PairStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairStatus::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown pair status `{s}`")))
    }
}

/// A source sentence with its machine translation and quality verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub segment_id: String,
    pub origin_line: u64,
    /// Source after grammar correction.
    pub source: String,
    /// Target after post-editing (or after human editing).
    pub target: String,
    /// Raw translation output before post-editing.
    pub raw_target: String,
    pub stage_trace: Vec<StageTraceEntry>,
    pub score: Option<QualityScore>,
    pub level: Option<QualityLevel>,
    pub status: PairStatus,
}

impl SentencePair {
    pub fn draft(segment: &Segment) -> Self {
        SentencePair {
            segment_id: segment.id.clone(),
            origin_line: segment.origin_line,
            source: segment.text.clone(),
            target: String::new(),
            raw_target: String::new(),
            stage_trace: Vec::new(),
            score: None,
            level: None,
            status: PairStatus::Draft,
        }
    }

    /// Moves the pair along the status graph, then re-checks invariants.
    pub fn transition(&mut self, next: PairStatus) -> Result<()> {
        if !self.status.can_become(next) {
            return Err(Error::State(format!(
                "pair {}: cannot move from {} to {}",
                self.segment_id, self.status, next
            )));
        }
        let prev = self.status;
        self.status = next;
        if let Err(e) = self.validate() {
            self.status = prev;
            return Err(e);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.segment_id;
        if self.score.is_some() != self.level.is_some() {
            return Err(Error::Validation(format!(
                "pair {id}: level must be present iff score is"
            )));
        }
        if let Some(score) = &self.score {
            score.validate()?;
        }
        match self.status {
            PairStatus::AutoAccepted if self.level != Some(QualityLevel::High) => {
                return Err(Error::Validation(format!(
                    "pair {id}: auto_accepted requires level high"
                )));
            }
            PairStatus::PendingReview | PairStatus::InReview
                if !matches!(self.level, Some(QualityLevel::Middle | QualityLevel::Low)) =>
            {
                return Err(Error::Validation(format!(
                    "pair {id}: {} requires level middle or low",
                    self.status
                )));
            }
            _ => {}
        }
        let mut cursor = 0;
        for entry in &self.stage_trace {
            match Stage::ALL[cursor..].iter().position(|s| *s == entry.stage) {
                Some(offset) => cursor += offset + 1,
                None => {
                    return Err(Error::Validation(format!(
                        "pair {id}: stage trace out of pipeline order"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-level flat prices in integer minor currency units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelPrices {
    pub high: u64,
    pub middle: u64,
    pub low: u64,
}

impl LevelPrices {
    pub fn get(&self, level: QualityLevel) -> u64 {
        match level {
            QualityLevel::High => self.high,
            QualityLevel::Middle => self.middle,
            QualityLevel::Low => self.low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingTable {
    pub currency: String,
    pub per_segment: LevelPrices,
    pub from_scratch_per_segment: u64,
}

impl Default for PricingTable {
    fn default() -> Self {
        PricingTable {
            currency: "USD".into(),
            per_segment: LevelPrices {
                high: 0,
                middle: 100,
                low: 300,
            },
            from_scratch_per_segment: 500,
        }
    }
}

impl PricingTable {
    pub fn validate(&self) -> Result<()> {
        let p = &self.per_segment;
        if !(p.high <= p.middle && p.middle <= p.low) {
            return Err(Error::Validation("pricing must satisfy high <= middle <= low".into()));
        }
        if self.from_scratch_per_segment < p.low {
            return Err(Error::Validation(
                "from-scratch price must be at least the low-level editing price".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default)]
    pub filter_rules: FilterRuleSet,
    #[serde(default)]
    pub quantizer: QuantizerConfig,
    #[serde(default)]
    pub pricing: PricingTable,
    /// Stages left out fall back to their builtin adapter.
    #[serde(default = "AdapterBinding::builtin_set", deserialize_with = "adapters_with_defaults")]
    pub adapters: BTreeMap<Stage, AdapterBinding>,
    /// Additional quality metrics averaged with the `qe` binding.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_metrics: Vec<AdapterBinding>,
}

fn adapters_with_defaults<'de, D: serde::Deserializer<'de>>(
    de: D,
) -> std::result::Result<BTreeMap<Stage, AdapterBinding>, D::Error> {
    let mut bound = BTreeMap::<Stage, AdapterBinding>::deserialize(de)?;
    for stage in Stage::ALL {
        bound.entry(stage).or_insert_with(|| AdapterBinding::builtin(stage));
    }
    Ok(bound)
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            source_lang: "en".into(),
            target_lang: "ko".into(),
            filter_rules: FilterRuleSet::default(),
            quantizer: QuantizerConfig::default(),
            pricing: PricingTable::default(),
            adapters: AdapterBinding::builtin_set(),
            extra_metrics: Vec::new(),
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<()> {
        for stage in Stage::ALL {
            let binding = self
                .adapters
                .get(&stage)
                .ok_or_else(|| Error::Validation(format!("no adapter bound for stage {stage}")))?;
            if binding.stage != stage {
                return Err(Error::Validation(format!(
                    "adapter bound under {stage} declares stage {}",
                    binding.stage
                )));
            }
            binding.validate()?;
        }
        let mut ids = vec![self.adapters[&Stage::Qe].adapter_id.as_str()];
        for metric in &self.extra_metrics {
            if metric.stage != Stage::Qe {
                return Err(Error::Validation("extra metrics must be qe bindings".into()));
            }
            metric.validate()?;
            if ids.contains(&metric.adapter_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate metric id `{}`",
                    metric.adapter_id
                )));
            }
            ids.push(&metric.adapter_id);
        }
        self.filter_rules.validate()?;
        self.quantizer.validate()?;
        self.pricing.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_order_examples() {
        assert_eq!(level_order(QualityLevel::Low, QualityLevel::High), Ordering::Less);
        assert_eq!(level_order(QualityLevel::Middle, QualityLevel::Middle), Ordering::Equal);
        assert_eq!(level_order(QualityLevel::High, QualityLevel::Middle), Ordering::Greater);
    }

    #[test]
    fn level_order_is_total() {
        for a in QualityLevel::ALL {
            for b in QualityLevel::ALL {
                assert_eq!(level_order(a, b), level_order(b, a).reverse());
            }
        }
    }

    fn scored_pair(level: QualityLevel, status: PairStatus) -> SentencePair {
        let mut metric_scores = BTreeMap::new();
        metric_scores.insert("m".to_string(), 0.5);
        SentencePair {
            segment_id: "p:1".into(),
            origin_line: 1,
            source: "a".into(),
            target: "b".into(),
            raw_target: "b".into(),
            stage_trace: vec![],
            score: Some(QualityScore {
                metric_scores,
                final_score: 0.5,
            }),
            level: Some(level),
            status,
        }
    }

    #[test]
    fn pair_invariants() {
        assert!(scored_pair(QualityLevel::High, PairStatus::AutoAccepted)
            .validate()
            .is_ok());
        assert!(scored_pair(QualityLevel::Middle, PairStatus::AutoAccepted)
            .validate()
            .is_err());
        assert!(scored_pair(QualityLevel::High, PairStatus::PendingReview)
            .validate()
            .is_err());
        let mut p = scored_pair(QualityLevel::Low, PairStatus::Draft);
        p.level = None;
        assert!(p.validate().is_err());
    }

    #[test]
    fn stage_trace_must_follow_pipeline_order() {
        let mut p = scored_pair(QualityLevel::Low, PairStatus::Draft);
        let entry = |stage| StageTraceEntry {
            stage,
            adapter_id: "x".into(),
            changed: false,
        };
        p.stage_trace = vec![
            entry(Stage::Gec),
            entry(Stage::Nmt),
            entry(Stage::Ape),
            entry(Stage::Qe),
        ];
        assert!(p.validate().is_ok());
        p.stage_trace = vec![entry(Stage::Nmt), entry(Stage::Gec)];
        assert!(p.validate().is_err());
        p.stage_trace = vec![entry(Stage::Gec), entry(Stage::Gec)];
        assert!(p.validate().is_err());
    }

    #[test]
    fn transition_rejects_illegal_edges() {
        let mut p = scored_pair(QualityLevel::Middle, PairStatus::Draft);
        assert!(p.transition(PairStatus::Accepted).is_err());
        assert_eq!(p.status, PairStatus::Draft);
        p.transition(PairStatus::PendingReview).unwrap();
        p.transition(PairStatus::InReview).unwrap();
        p.transition(PairStatus::Edited).unwrap();
        for next in PairStatus::ALL {
            assert!(p.transition(next).is_err());
        }
    }

    #[test]
    fn auto_accept_of_middle_pair_fails_and_rolls_back() {
        let mut p = scored_pair(QualityLevel::Middle, PairStatus::Draft);
        assert!(p.transition(PairStatus::AutoAccepted).is_err());
        assert_eq!(p.status, PairStatus::Draft);
    }

    #[test]
    fn pricing_invariants() {
        assert!(PricingTable::default().validate().is_ok());
        let mut p = PricingTable::default();
        p.per_segment.high = 200;
        assert!(p.validate().is_err());
        let p = PricingTable {
            from_scratch_per_segment: 10,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn default_config_is_valid_and_fingerprint_is_stable() {
        let c = ProjectConfig::default();
        c.validate().unwrap();
        assert_eq!(c.fingerprint(), c.clone().fingerprint());
        let mut d = c.clone();
        d.target_lang = "de".into();
        assert_ne!(c.fingerprint(), d.fingerprint());
    }

    #[test]
    fn config_missing_stage_is_rejected() {
        let mut c = ProjectConfig::default();
        c.adapters.remove(&Stage::Ape);
        assert!(c.validate().is_err());
    }

    #[test]
    fn minimal_config_json_gets_defaults() {
        let c: ProjectConfig = serde_json::from_str(r#"{"source_lang":"en","target_lang":"ko"}"#).unwrap();
        assert_eq!(c, ProjectConfig::default());
    }

    #[test]
    fn partial_adapter_map_keeps_builtin_for_other_stages() {
        let c: ProjectConfig = serde_json::from_str(
            r#"{"adapters":{"nmt":{"stage":"nmt","kind":"remote","endpoint":"http://mt.local/","adapter_id":"mt"}}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.adapters[&Stage::Gec], AdapterBinding::builtin(Stage::Gec));
        assert_eq!(c.adapters[&Stage::Nmt].adapter_id, "mt");
    }
}
