//! Three-stage trace quality control: structure, causal alignment, terminology.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::taxonomy::{Attribute as A, AttributeRecord, Factor, NOT_APPARENT};
use super::trace::CoTTrace;
use crate::tasks::TaskKind;

/// Outcome of one stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcCheck {
    pub pass: bool,
    pub reasons: Vec<String>,
}

impl QcCheck {
    fn from_reasons(reasons: Vec<String>) -> Self {
        QcCheck { pass: reasons.is_empty(), reasons }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QCReport {
    pub structure_pass: bool,
    pub causal_alignment_pass: bool,
    pub terminology_pass: bool,
    pub reasons: Vec<String>,
}

impl QCReport {
    pub fn combine(structure: QcCheck, alignment: QcCheck, terminology: QcCheck) -> Self {
        let reasons = [&structure, &alignment, &terminology].iter().flat_map(|c| c.reasons.clone()).collect();
        QCReport {
            structure_pass: structure.pass,
            causal_alignment_pass: alignment.pass,
            terminology_pass: terminology.pass,
            reasons,
        }
    }

    pub fn pass(&self) -> bool {
        self.structure_pass && self.causal_alignment_pass && self.terminology_pass
    }
}

/// All three stages.
pub fn qc_all(trace: &CoTTrace, task: TaskKind, input: &AttributeRecord, projected: &AttributeRecord) -> QCReport {
    QCReport::combine(qc_structure(trace, task), qc_causal_alignment(trace, input, projected), qc_terminology(trace))
}

/// Value found after a quoted attribute key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotValue {
    /// The key is named without a `is <value>` continuation.
    Mention,
    Known(&'static str),
    Unknown(String),
}

fn is_delim(rest: &str) -> bool {
    rest.is_empty() || rest.starts_with([',', '.', ';', '!', '?'])
}

/// Quoted attribute keys and their slot values in reading order.
pub fn slots(text: &str) -> Vec<(A, SlotValue)> {
    let mut found = Vec::new();
    for a in A::ALL {
        let quoted = format!("\"{}\"", a.key());
        for (pos, _) in text.match_indices(&quoted) {
            let after = &text[pos + quoted.len()..];
            let value = match after.strip_prefix(" is ") {
                None => SlotValue::Mention,
                Some(rest) => a
                    .options()
                    .iter()
                    .copied()
                    .chain([NOT_APPARENT])
                    .filter(|o| rest.starts_with(o) && is_delim(&rest[o.len()..]))
                    .max_by_key(|o| o.len())
                    .map(SlotValue::Known)
                    .unwrap_or_else(|| {
                        let end = rest.find([',', '.', ';']).unwrap_or(rest.len());
                        SlotValue::Unknown(rest[..end].to_string())
                    }),
            };
            found.push((pos, a, value));
        }
    }
    found.sort_by_key(|f| f.0);
    found.into_iter().map(|(_, a, v)| (a, v)).collect()
}

pub fn sentence_count(text: &str) -> usize {
    let mut n = 0;
    let mut pending = false;
    let chars: Vec<char> = text.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            if pending {
                n += 1;
            }
            pending = false;
        } else if !c.is_whitespace() {
            pending = true;
        }
    }
    n + usize::from(pending)
}

fn has_list_marker(text: &str) -> bool {
    text.lines().any(|l| {
        let l = l.trim_start();
        l.starts_with(['-', '*', '•', '–', '—'])
            || l.split_once(['.', ')'])
                .is_some_and(|(head, _)| !head.is_empty() && head.chars().all(|c| c.is_ascii_digit()))
    })
}

fn mentioned(text: &str) -> BTreeSet<A> {
    slots(text).into_iter().map(|(a, _)| a).collect()
}

fn factor_set(f: Factor) -> BTreeSet<A> {
    A::ALL.into_iter().filter(|a| a.factor() == f).collect()
}

fn names(set: &BTreeSet<A>) -> String {
    set.iter().map(|a| a.key()).collect::<Vec<_>>().join(", ")
}

pub fn qc_structure(trace: &CoTTrace, task: TaskKind) -> QcCheck {
    fn para(
        reasons: &mut Vec<String>,
        label: &str,
        text: &str,
        sentences: std::ops::RangeInclusive<usize>,
        keys: Option<BTreeSet<A>>,
    ) {
        if text.trim().is_empty() {
            reasons.push(format!("missing {label}"));
            return;
        }
        if has_list_marker(text) {
            reasons.push(format!("{label} contains a list marker"));
        }
        if text.contains('\n') {
            reasons.push(format!("{label} spans several paragraphs"));
        }
        let n = sentence_count(text);
        if !sentences.contains(&n) {
            reasons.push(format!("{label} has {n} sentences, expected {sentences:?}"));
        }
        if let Some(want) = keys {
            let got = mentioned(text);
            if got != want {
                reasons.push(format!("{label} names [{}], expected [{}]", names(&got), names(&want)));
            }
        }
    }
    let mut reasons = Vec::new();
    para(&mut reasons, "task instruction", &trace.step1_task_instruction, 2..=3, Some(BTreeSet::new()));
    para(
        &mut reasons,
        "temporal paragraph",
        &trace.step2_temporal_paragraph,
        1..=usize::MAX,
        Some(factor_set(Factor::Temporal)),
    );
    para(
        &mut reasons,
        "perceptual paragraph",
        &trace.step3_perceptual_paragraph,
        1..=usize::MAX,
        Some(factor_set(Factor::Perceptual)),
    );
    para(&mut reasons, "summary", &trace.summary, 2..=4, None);
    let outcomes = [&trace.step4_direct_outcome_sentence, &trace.step5_deep_outcome_paragraph];
    if task == TaskKind::Inversion {
        if outcomes.iter().any(|o| o.is_some()) {
            reasons.push("inversion trace carries outcome steps".into());
        }
    } else {
        match &trace.step4_direct_outcome_sentence {
            Some(s) => para(&mut reasons, "direct outcome", s, 1..=1, Some(factor_set(Factor::DirectOutcome))),
            None => reasons.push("missing direct outcome".into()),
        }
        match &trace.step5_deep_outcome_paragraph {
            Some(s) => para(&mut reasons, "deep outcome", s, 2..=2, Some(factor_set(Factor::DeepOutcome))),
            None => reasons.push("missing deep outcome".into()),
        }
    }
    QcCheck::from_reasons(reasons)
}

/// Every slot in the steps must carry the input record's choice and every
/// slot in the summary the projected record's choice.
pub fn qc_causal_alignment(trace: &CoTTrace, input: &AttributeRecord, projected: &AttributeRecord) -> QcCheck {
    let mut reasons = Vec::new();
    let steps = [
        Some(&trace.step2_temporal_paragraph),
        Some(&trace.step3_perceptual_paragraph),
        trace.step4_direct_outcome_sentence.as_ref(),
        trace.step5_deep_outcome_paragraph.as_ref(),
    ];
    let mut check = |text: &str, rec: &AttributeRecord, part: &str| {
        for (a, v) in slots(text) {
            let got = match &v {
                SlotValue::Mention => continue,
                SlotValue::Known(s) => s.to_string(),
                SlotValue::Unknown(s) => s.clone(),
            };
            if got != rec.choice(a) {
                reasons.push(format!("{part}: \"{}\" says {got:?} but the record says {:?}", a.key(), rec.choice(a)));
            }
        }
    };
    for s in steps.iter().flatten() {
        check(s, input, "steps");
    }
    check(&trace.summary, projected, "summary");

    let mut required = factor_set(Factor::Temporal);
    required.extend(factor_set(Factor::Perceptual));
    if trace.step4_direct_outcome_sentence.is_some() || trace.step5_deep_outcome_paragraph.is_some() {
        required.extend(factor_set(Factor::DirectOutcome));
        required.extend(factor_set(Factor::DeepOutcome));
    }
    let present: BTreeSet<A> = steps
        .iter()
        .flatten()
        .flat_map(|s| slots(s))
        .filter(|(_, v)| *v != SlotValue::Mention)
        .map(|(a, _)| a)
        .collect();
    for a in required.difference(&present) {
        reasons.push(format!("steps omit \"{}\"", a.key()));
    }
    QcCheck::from_reasons(reasons)
}

/// Every slot value must be a verbatim option of its attribute.
pub fn qc_terminology(trace: &CoTTrace) -> QcCheck {
    let reasons = slots(&trace.render())
        .into_iter()
        .filter_map(|(a, v)| match v {
            SlotValue::Unknown(s) => Some(format!("\"{}\" uses {s:?}, which is not an option", a.key())),
            _ => None,
        })
        .collect();
    QcCheck::from_reasons(reasons)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot::trace::compose_trace;

    fn record() -> AttributeRecord {
        let mut r = AttributeRecord::new();
        r.put(A::MotionDirection, "east", "");
        r.put(A::Morphology, "banded", "");
        r.put(A::IntensityEvolution, "strengthening", "");
        r
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(sentence_count("One. Two. Three"), 3);
        assert_eq!(sentence_count("Level is very strong (181–218)."), 1);
        assert_eq!(sentence_count(""), 0);
    }

    #[test]
    fn slot_parser_prefers_longest_option() {
        let s = slots("\"Main motion direction\" is northeast, and \"Morphology\" is semi-banded.");
        assert_eq!(s[0], (A::MotionDirection, SlotValue::Known("northeast")));
        assert_eq!(s[1], (A::Morphology, SlotValue::Unknown("semi-banded".into())));
    }

    #[test]
    fn stages_catch_their_faults() {
        let r = record();
        let t = compose_trace(&r, &r, TaskKind::Nowcast).unwrap();
        assert!(qc_all(&t, TaskKind::Nowcast, &r, &r).pass());

        let mut missing = t.clone();
        missing.step4_direct_outcome_sentence = None;
        assert!(qc_structure(&missing, TaskKind::Nowcast).reasons.contains(&"missing direct outcome".to_string()));

        let mut three = t.clone();
        three.step5_deep_outcome_paragraph =
            Some(format!("{} Extra words here.", t.step5_deep_outcome_paragraph.clone().unwrap()));
        assert!(!qc_structure(&three, TaskKind::Nowcast).pass);

        let mut west = t.clone();
        west.step2_temporal_paragraph = west.step2_temporal_paragraph.replace("is east", "is west");
        assert!(!qc_causal_alignment(&west, &r, &r).pass);
        assert!(qc_terminology(&west).pass);

        let mut eastward = t.clone();
        eastward.step2_temporal_paragraph = eastward.step2_temporal_paragraph.replace("is east", "is eastward");
        assert!(!qc_terminology(&eastward).pass);

        let mut bullet = t;
        bullet.step3_perceptual_paragraph = format!("- {}", bullet.step3_perceptual_paragraph);
        assert!(!qc_structure(&bullet, TaskKind::Nowcast).pass);
    }
}
