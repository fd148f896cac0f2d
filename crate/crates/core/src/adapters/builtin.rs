//! Deterministic in-process reference stages for offline runs and tests.

use super::{AdapterRequest, AdapterResponse, CallError, ResponseItem, StageAdapter};
use crate::domain::Stage;
use crate::scoring::heuristic_qe;

const GEC_MARKS: [char; 6] = ['.', ',', '!', '?', ';', ':'];
const TERMINAL_MARKS: [char; 3] = ['.', '!', '?'];

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Terminal `.`/`!`/`?` of the trimmed text, if any.
pub fn terminal_mark(text: &str) -> Option<char> {
    text.trim_end().chars().last().filter(|c| TERMINAL_MARKS.contains(c))
}

/// Reference grammar correction: trim, collapse whitespace, drop spaces
/// before `. , ! ? ; :` and put one space after such a mark when a letter
/// follows it directly.
pub fn gec_correct(text: &str) -> String {
    let collapsed = collapse_whitespace(text);
    let chars: Vec<char> = collapsed.chars().collect();
    let mut out = String::with_capacity(collapsed.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let next = chars.get(i + 1).copied();
        if c == ' ' && next.is_some_and(|n| GEC_MARKS.contains(&n)) {
            continue;
        }
        out.push(c);
        if GEC_MARKS.contains(&c) && next.is_some_and(char::is_alphabetic) {
            out.push(' ');
        }
    }
    out
}

/// Offline stand-in for translation: reverses whitespace tokens and keeps a
/// trailing terminal mark in final position. `"a b c."` becomes `"c b a."`.
pub fn mock_translate(text: &str) -> String {
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    let mut mark = None;
    if let Some(last) = tokens.pop() {
        match last.chars().last() {
            Some(c) if TERMINAL_MARKS.contains(&c) => {
                mark = Some(c);
                let stem = &last[..last.len() - c.len_utf8()];
                if !stem.is_empty() {
                    tokens.push(stem);
                }
            }
            _ => tokens.push(last),
        }
    }
    tokens.reverse();
    let mut out = tokens.join(" ");
    if let Some(c) = mark {
        out.push(c);
    }
    out
}

/// Reference post-editing. Returns the edited target and whether it changed.
///
/// An empty target is replaced by the source verbatim. Otherwise whitespace
/// is collapsed and, when the source ends in `.`/`!`/`?` but the target ends
/// in none of them, the source's mark is appended.
pub fn post_edit(source: &str, target: &str) -> (String, bool) {
    if target.trim().is_empty() {
        return (source.to_string(), true);
    }
    let mut edited = collapse_whitespace(target);
    if let Some(mark) = terminal_mark(source) {
        if terminal_mark(&edited).is_none() {
            edited.push(mark);
        }
    }
    let changed = edited != target;
    (edited, changed)
}

#[derive(Debug, Clone)]
pub struct BuiltinAdapter {
    stage: Stage,
    id: String,
}

impl BuiltinAdapter {
    pub fn new(stage: Stage) -> Self {
        BuiltinAdapter::with_id(stage, format!("builtin-{stage}"))
    }

    pub fn with_id(stage: Stage, id: String) -> Self {
        BuiltinAdapter { stage, id }
    }
}

impl StageAdapter for BuiltinAdapter {
    fn adapter_id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AdapterRequest) -> Result<AdapterResponse, CallError> {
        if request.stage != self.stage {
            return Err(CallError::Protocol(format!(
                "{} adapter received a {} request",
                self.stage, request.stage
            )));
        }
        let items = request
            .items
            .iter()
            .map(|it| {
                let target = it.target_text.as_deref().unwrap_or("");
                let (output_text, score) = match self.stage {
                    Stage::Gec => (Some(gec_correct(&it.source_text)), None),
                    Stage::Nmt => (Some(mock_translate(&it.source_text)), None),
                    Stage::Ape => (Some(post_edit(&it.source_text, target).0), None),
                    Stage::Qe => (None, Some(heuristic_qe(&it.source_text, target))),
                };
                ResponseItem {
                    id: it.id.clone(),
                    output_text,
                    score,
                }
            })
            .collect();
        Ok(AdapterResponse {
            adapter_id: self.id.clone(),
            items,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gec_examples() {
        assert_eq!(gec_correct("Hello  ,world"), "Hello, world");
        assert_eq!(gec_correct("Clean sentence."), "Clean sentence.");
        assert_eq!(gec_correct("  wait ... what ?  "), "wait... what?");
        assert_eq!(gec_correct("pi is 3.14"), "pi is 3.14");
        assert_eq!(gec_correct("a;b:c"), "a; b: c");
    }

    #[test]
    fn nmt_examples() {
        assert_eq!(mock_translate("the cat sat."), "sat cat the.");
        assert_eq!(mock_translate("hello"), "hello");
        assert_eq!(mock_translate("a b c."), "c b a.");
        assert_eq!(mock_translate(""), "");
        assert_eq!(mock_translate("why not?"), "not why?");
    }

    #[test]
    fn ape_examples() {
        assert_eq!(post_edit("Hi there.", "hi there"), ("hi there.".to_string(), true));
        assert_eq!(post_edit("Go!", "Go!"), ("Go!".to_string(), false));
        assert_eq!(post_edit("Source.", ""), ("Source.".to_string(), true));
        assert_eq!(post_edit("No mark", "a   b"), ("a b".to_string(), true));
        // A different terminal mark is left alone.
        assert_eq!(post_edit("Stop.", "stop!"), ("stop!".to_string(), false));
    }

    fn gec_input() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just(' '),
                Just('\t'),
                Just('.'),
                Just(','),
                Just('!'),
                Just('?'),
                Just(';'),
                Just(':'),
                proptest::char::range('a', 'z'),
                proptest::char::range('0', '9'),
                Just('é'),
                Just('한'),
                Just('\u{3000}'),
                any::<char>(),
            ],
            0..40,
        )
        .prop_map(|cs| cs.into_iter().collect())
    }

    fn terminated_sentence() -> impl Strategy<Value = String> {
        (
            proptest::collection::vec("[a-zA-Z0-9']{1,8}", 1..10),
            prop_oneof![Just('.'), Just('!'), Just('?')],
        )
            .prop_map(|(words, mark)| format!("{}{mark}", words.join(" ")))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn gec_is_idempotent(s in gec_input()) {
            let once = gec_correct(&s);
            prop_assert_eq!(gec_correct(&once), once);
        }

        #[test]
        fn mock_translation_is_an_involution(s in terminated_sentence()) {
            prop_assert_eq!(mock_translate(&mock_translate(&s)), s);
        }

        #[test]
        fn ape_never_leaves_empty_target(src in "[a-z]{1,5}[.!?]?", tgt in "[a-z ]{0,8}") {
            let (out, _) = post_edit(&src, &tgt);
            prop_assert!(!out.trim().is_empty());
        }
    }
}
