//! Task kinds and training/evaluation samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cot::{annotate_from_params, compose_trace, AttributeRecord};
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::model::prompt_text;
use crate::stormsim::{derive_satellite, window_offsets, RadarEvent, INPUT_FRAMES, TARGET_FRAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Nowcast,
    Inversion,
    FrameUnderstand,
    SequenceUnderstand,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] =
        [TaskKind::Nowcast, TaskKind::Inversion, TaskKind::FrameUnderstand, TaskKind::SequenceUnderstand];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Nowcast => "nowcast",
            TaskKind::Inversion => "inversion",
            TaskKind::FrameUnderstand => "frame_understand",
            TaskKind::SequenceUnderstand => "sequence_understand",
        }
    }

    pub fn is_generation(self) -> bool {
        matches!(self, TaskKind::Nowcast | TaskKind::Inversion)
    }

    /// Reserved vocabulary token announcing the task.
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Nowcast => "<nowcast>",
            TaskKind::Inversion => "<inversion>",
            TaskKind::FrameUnderstand => "<frame>",
            TaskKind::SequenceUnderstand => "<sequence>",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown task {s:?}")))
    }
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub id: String,
    pub task: TaskKind,
    /// Nowcast: 10 radar frames; inversion: the two infrared channels;
    /// understanding: 1 or 12 radar frames.
    pub inputs: FrameSeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_frames: Option<FrameSeq>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
    /// Attributes of the input window (for understanding, of the described frames).
    pub record: AttributeRecord,
    /// Rendered reasoning trace for generation samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

impl TaskSample {
    pub fn prompt(&self) -> String {
        prompt_text(self.task)
    }
}

/// Samples of one task from every window of `event`.
pub fn samples_from_event(event: &RadarEvent, task: TaskKind) -> Result<Vec<TaskSample>> {
    let p = &event.params;
    let frames = &event.frames;
    let satellite = (task == TaskKind::Inversion).then(|| derive_satellite(frames));
    let mut out = Vec::new();
    for &o in window_offsets(frames.len())? {
        let id = format!("ev{}-w{o}-{}", p.seed, task.name());
        let last = o + INPUT_FRAMES - 1;
        let sample = match task {
            TaskKind::Nowcast => {
                let record = annotate_from_params(p, o, INPUT_FRAMES)?;
                let projected = annotate_from_params(p, o + INPUT_FRAMES, TARGET_FRAMES)?;
                let trace = compose_trace(&record, &projected, task)?.render();
                TaskSample {
                    id,
                    task,
                    inputs: frames.window(o, INPUT_FRAMES)?,
                    target_frames: Some(frames.window(o + INPUT_FRAMES, TARGET_FRAMES)?),
                    target_text: None,
                    record,
                    trace: Some(trace),
                }
            }
            TaskKind::Inversion => {
                let (ir069, ir107) = satellite.as_ref().expect("computed for inversion");
                let record = annotate_from_params(p, last, 1)?;
                let trace = compose_trace(&record, &record, task)?.render();
                TaskSample {
                    id,
                    task,
                    inputs: FrameSeq::from_frames(frames.side(), &[ir069.frame(last), ir107.frame(last)])?,
                    target_frames: Some(frames.window(last, 1)?),
                    target_text: None,
                    record,
                    trace: Some(trace),
                }
            }
            TaskKind::FrameUnderstand => {
                let record = annotate_from_params(p, last, 1)?;
                TaskSample {
                    id,
                    task,
                    inputs: frames.window(last, 1)?,
                    target_frames: None,
                    target_text: Some(record.to_lines()),
                    record,
                    trace: None,
                }
            }
            TaskKind::SequenceUnderstand => {
                let record = annotate_from_params(p, o + INPUT_FRAMES, TARGET_FRAMES)?;
                TaskSample {
                    id,
                    task,
                    inputs: frames.window(o + INPUT_FRAMES, TARGET_FRAMES)?,
                    target_frames: None,
                    target_text: Some(record.to_lines()),
                    record,
                    trace: None,
                }
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Samples for each task over all events, in event order.
pub fn build_task_sets(events: &[RadarEvent]) -> Result<std::collections::BTreeMap<TaskKind, Vec<TaskSample>>> {
    let mut sets = std::collections::BTreeMap::new();
    for task in TaskKind::ALL {
        let mut v = Vec::new();
        for ev in events {
            v.extend(samples_from_event(ev, task)?);
        }
        sets.insert(task, v);
    }
    Ok(sets)
}
