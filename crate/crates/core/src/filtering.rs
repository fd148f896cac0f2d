//! Rule-based cleaning of the mono corpus.
//!
//! Rules run in a fixed order and the first failing rule names the
//! rejection: empty, too_short, too_long, too_many_tokens, no_letters,
//! wrong_script, duplicate. Text is never modified here.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::domain::{FilterVerdict, RejectReason, Segment};
use crate::error::{Error, Result};

/// Inclusive range of Unicode scalar values.
pub type CharRange = [u32; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRuleSet {
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_token_count: usize,
    pub dedup: bool,
    pub drop_no_letter: bool,
    pub allowed_script_ratio: f64,
    /// Expected script ranges keyed by language tag (or primary subtag).
    pub scripts: BTreeMap<String, Vec<CharRange>>,
}

impl Default for FilterRuleSet {
    fn default() -> Self {
        FilterRuleSet {
            min_chars: 2,
            max_chars: 1000,
            max_token_count: 150,
            dedup: true,
            drop_no_letter: true,
            allowed_script_ratio: 0.5,
            scripts: default_scripts(),
        }
    }
}

const LATIN: &[CharRange] = &[
    [0x41, 0x5A],
    [0x61, 0x7A],
    [0xAA, 0xAA],
    [0xBA, 0xBA],
    [0xC0, 0x24F],
    [0x1E00, 0x1EFF],
];
const HANGUL: &[CharRange] = &[
    [0x1100, 0x11FF],
    [0x3130, 0x318F],
    [0xA960, 0xA97F],
    [0xAC00, 0xD7A3],
    [0xD7B0, 0xD7FF],
];
const HAN: &[CharRange] = &[[0x3400, 0x4DBF], [0x4E00, 0x9FFF], [0xF900, 0xFAFF]];
const KANA: &[CharRange] = &[[0x3040, 0x309F], [0x30A0, 0x30FF], [0x31F0, 0x31FF]];
const CYRILLIC: &[CharRange] = &[[0x400, 0x52F]];
const GREEK: &[CharRange] = &[[0x370, 0x3FF]];
const ARABIC: &[CharRange] = &[[0x600, 0x6FF], [0x750, 0x77F]];

fn default_scripts() -> BTreeMap<String, Vec<CharRange>> {
    let mut m = BTreeMap::new();
    for lang in [
        "en", "de", "fr", "es", "it", "pt", "nl", "sv", "da", "no", "fi", "pl", "cs", "tr", "vi", "id",
    ] {
        m.insert(lang.to_string(), LATIN.to_vec());
    }
    m.insert("ko".into(), HANGUL.to_vec());
    m.insert("zh".into(), HAN.to_vec());
    m.insert("ja".into(), [HAN, KANA].concat());
    m.insert("ru".into(), CYRILLIC.to_vec());
    m.insert("uk".into(), CYRILLIC.to_vec());
    m.insert("el".into(), GREEK.to_vec());
    m.insert("ar".into(), ARABIC.to_vec());
    m
}

impl FilterRuleSet {
    pub fn validate(&self) -> Result<()> {
        if self.min_chars < 1 {
            return Err(Error::Validation("min_chars must be >= 1".into()));
        }
        if self.min_chars > self.max_chars {
            return Err(Error::Validation("min_chars must not exceed max_chars".into()));
        }
        if !(0.0..=1.0).contains(&self.allowed_script_ratio) {
            return Err(Error::Validation("allowed_script_ratio must lie in [0,1]".into()));
        }
        Ok(())
    }

    fn script_for(&self, lang: &str) -> Option<&[CharRange]> {
        let lang = lang.to_ascii_lowercase();
        if let Some(r) = self.scripts.get(&lang) {
            return Some(r);
        }
        let primary = lang.split(['-', '_']).next().unwrap_or("");
        self.scripts.get(primary).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: u64,
    pub retained_count: u64,
    /// Only reasons that occurred are listed.
    pub rejections: BTreeMap<RejectReason, u64>,
}

impl FilterReport {
    pub fn rejected_count(&self) -> u64 {
        self.rejections.values().sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.input_count == self.retained_count + self.rejected_count()
    }
}

/// Dedup key: NFC, lowercased, whitespace runs collapsed, trimmed.
pub fn normalize_for_dedup(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.nfc().collect()
}

fn per_segment_reason(seg: &Segment, rules: &FilterRuleSet) -> Option<RejectReason> {
    let text = seg.text.trim();
    if text.is_empty() {
        return Some(RejectReason::Empty);
    }
    let chars = text.chars().count();
    if chars < rules.min_chars {
        return Some(RejectReason::TooShort);
    }
    if chars > rules.max_chars {
        return Some(RejectReason::TooLong);
    }
    if text.split_whitespace().count() > rules.max_token_count {
        return Some(RejectReason::TooManyTokens);
    }
    let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    if rules.drop_no_letter && letters.is_empty() {
        return Some(RejectReason::NoLetters);
    }
    if let Some(ranges) = rules.script_for(&seg.lang) {
        if !letters.is_empty() {
            let in_script = letters
                .iter()
                .filter(|c| {
                    let cp = **c as u32;
                    ranges.iter().any(|[lo, hi]| (*lo..=*hi).contains(&cp))
                })
                .count();
            if (in_script as f64) < rules.allowed_script_ratio * letters.len() as f64 {
                return Some(RejectReason::WrongScript);
            }
        }
    }
    None
}

/// Verdict for every input segment, in input order.
pub fn judge_corpus(segments: &[Segment], rules: &FilterRuleSet) -> Result<Vec<FilterVerdict>> {
    let mut ids = HashSet::with_capacity(segments.len());
    for seg in segments {
        if !ids.insert(seg.id.as_str()) {
            return Err(Error::Validation(format!("duplicate segment id `{}`", seg.id)));
        }
    }

    let mut reasons: Vec<Option<RejectReason>> = segments.iter().map(|s| per_segment_reason(s, rules)).collect();

    if rules.dedup {
        // First occurrence by origin_line wins, independent of input order.
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by_key(|&i| segments[i].origin_line);
        let mut seen = HashSet::new();
        for i in order {
            if reasons[i].is_none() && !seen.insert(normalize_for_dedup(&segments[i].text)) {
                reasons[i] = Some(RejectReason::Duplicate);
            }
        }
    }

    Ok(reasons
        .into_iter()
        .map(|r| r.map_or(FilterVerdict::Retained, FilterVerdict::Rejected))
        .collect())
}

pub fn report_from_verdicts(verdicts: &[FilterVerdict]) -> FilterReport {
    let mut report = FilterReport {
        input_count: verdicts.len() as u64,
        ..FilterReport::default()
    };
    for v in verdicts {
        match v {
            FilterVerdict::Retained => report.retained_count += 1,
            FilterVerdict::Rejected(reason) => *report.rejections.entry(*reason).or_default() += 1,
        }
    }
    report
}

/// Retained segments (input order, verdict set) and the rejection report.
pub fn filter_corpus(segments: &[Segment], rules: &FilterRuleSet) -> Result<(Vec<Segment>, FilterReport)> {
    let verdicts = judge_corpus(segments, rules)?;
    let report = report_from_verdicts(&verdicts);
    let retained = segments
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| **v == FilterVerdict::Retained)
        .map(|(s, v)| Segment {
            filter_verdict: Some(*v),
            ..s.clone()
        })
        .collect();
    Ok((retained, report))
}
