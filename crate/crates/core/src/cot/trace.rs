//! Five-step reasoning traces filled from attribute records.

use serde::{Deserialize, Serialize};

use super::taxonomy::{Attribute as A, AttributeRecord, Factor};
use crate::error::Result;
use crate::tasks::TaskKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTTrace {
    pub step1_task_instruction: String,
    pub step2_temporal_paragraph: String,
    pub step3_perceptual_paragraph: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step4_direct_outcome_sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step5_deep_outcome_paragraph: Option<String>,
    pub summary: String,
}

impl CoTTrace {
    /// Steps in order, one paragraph per line.
    pub fn render(&self) -> String {
        let mut parts = vec![
            self.step1_task_instruction.as_str(),
            &self.step2_temporal_paragraph,
            &self.step3_perceptual_paragraph,
        ];
        parts.extend(self.step4_direct_outcome_sentence.as_deref());
        parts.extend(self.step5_deep_outcome_paragraph.as_deref());
        parts.push(&self.summary);
        parts.join("\n")
    }
}

/// `"<key>" is <choice>` slot text.
pub fn slot(rec: &AttributeRecord, a: A) -> String {
    format!("\"{}\" is {}", a.key(), rec.choice(a))
}

fn list3(rec: &AttributeRecord, attrs: [A; 3]) -> String {
    format!("{}, {}, and {}", slot(rec, attrs[0]), slot(rec, attrs[1]), slot(rec, attrs[2]))
}

fn attrs_of(f: Factor) -> [A; 3] {
    let v: Vec<A> = A::ALL.into_iter().filter(|a| a.factor() == f).collect();
    [v[0], v[1], v[2]]
}

fn temporal_gloss(rec: &AttributeRecord) -> &'static str {
    match (rec.choice(A::MotionDirection), rec.choice(A::RotationCenter)) {
        ("no obvious motion", _) => "The echoes hold their place over the input frames.",
        (_, "no rotation") => "The echoes translate as a whole without turning.",
        (_, "not apparent") => "The echoes shift between frames.",
        _ => "The echoes shift while turning about a center.",
    }
}

/// Builds the trace for one sample. `input` describes the observed window and
/// `projected` the window to be produced.
pub fn compose_trace(input: &AttributeRecord, projected: &AttributeRecord, task: TaskKind) -> Result<CoTTrace> {
    let step1 = match task {
        TaskKind::Inversion => "This is a radar inversion task that reads two infrared satellite channels. \
             The goal is to reconstruct the radar intensity field seen at the same moment."
            .to_string(),
        _ => "This is a short-range nowcasting task that reads the last 10 radar frames. \
             The goal is to forecast the following 12 frames."
            .to_string(),
    };
    let temporal = attrs_of(Factor::Temporal);
    let perceptual = attrs_of(Factor::Perceptual);
    let step2 = format!("Across the input frames, {}. {}", list3(input, temporal), temporal_gloss(input));
    let step3 = format!(
        "In the input frames, {}. These choices fix the shape, strength and location of the echoes.",
        list3(input, perceptual)
    );
    let (step4, step5, summary) = if task == TaskKind::Inversion {
        let summary = format!(
            "The reconstructed frame should keep these echo properties. In the target frame, {}.",
            list3(projected, perceptual)
        );
        (None, None, summary)
    } else {
        let step4 = format!("Given the motion and structure above, {}.", slot(input, A::IntensityEvolution));
        let step5 = format!(
            "Following that intensity trend, {}. Consistent with the same cues, {}.",
            slot(input, A::ArealCoverage),
            slot(input, A::OrganizationEvolution)
        );
        let summary = format!(
            "The forecast extends the observed motion and intensity trend. Over the forecast frames, {}, {}, and {}.",
            slot(projected, A::MotionDirection),
            slot(projected, A::IntensityEvolution),
            slot(projected, A::ArealCoverage)
        );
        (Some(step4), Some(step5), summary)
    };
    Ok(CoTTrace {
        step1_task_instruction: step1,
        step2_temporal_paragraph: step2,
        step3_perceptual_paragraph: step3,
        step4_direct_outcome_sentence: step4,
        step5_deep_outcome_paragraph: step5,
        summary,
    })
}
