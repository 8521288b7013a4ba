//! CoT dataset construction over generated events.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotate::annotate_from_params;
use super::qc::{qc_all, QCReport};
use super::taxonomy::{Attribute as A, AttributeRecord, DIRECTION};
use super::trace::{compose_trace, slot, CoTTrace};
use crate::error::{CoreError, Result};
use crate::stormsim::{window_offsets, RadarEvent, INPUT_FRAMES, TARGET_FRAMES};
use crate::tasks::TaskKind;

/// One line of the CoT manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotEntry {
    pub sample_id: String,
    pub task_kind: TaskKind,
    pub trace: CoTTrace,
    pub record: AttributeRecord,
    pub projected: AttributeRecord,
    pub qc: QCReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CotDataset {
    pub entries: Vec<CotEntry>,
    pub rejected: Vec<CotEntry>,
    pub corrupted: usize,
}

impl CotDataset {
    pub fn attempted(&self) -> usize {
        self.entries.len() + self.rejected.len()
    }

    /// Fraction of composed traces that passed all stages (1.0 when empty).
    pub fn pass_rate(&self) -> f64 {
        if self.attempted() == 0 {
            1.0
        } else {
            self.entries.len() as f64 / self.attempted() as f64
        }
    }

    /// Passing entries as JSON lines.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut f, row)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CoreError::from))
        .collect()
}

/// Input and projected records for each window of `event`.
pub fn window_records(event: &RadarEvent, task: TaskKind) -> Result<Vec<(String, AttributeRecord, AttributeRecord)>> {
    let p = &event.params;
    window_offsets(p.frames)?
        .iter()
        .map(|&o| {
            let id = format!("ev{}-w{o}", p.seed);
            match task {
                TaskKind::Inversion => {
                    let rec = annotate_from_params(p, o + INPUT_FRAMES - 1, 1)?;
                    Ok((id, rec.clone(), rec))
                }
                _ => Ok((
                    id,
                    annotate_from_params(p, o, INPUT_FRAMES)?,
                    annotate_from_params(p, o + INPUT_FRAMES, TARGET_FRAMES)?,
                )),
            }
        })
        .collect()
}

/// Damages a trace in one of several ways, each caught by some QC stage.
pub fn corrupt(trace: &CoTTrace, input: &AttributeRecord, task: TaskKind, kind: usize) -> CoTTrace {
    let mut t = trace.clone();
    let kinds: &[usize] = if task == TaskKind::Inversion { &[0, 2, 4] } else { &[0, 1, 2, 3, 4] };
    match kinds[kind % kinds.len()] {
        0 => {
            let cur = input.choice(A::MotionDirection);
            let other = DIRECTION.iter().find(|d| **d != cur).expect("several directions");
            let swapped = format!("\"{}\" is {other}", A::MotionDirection.key());
            t.step2_temporal_paragraph = t.step2_temporal_paragraph.replace(&slot(input, A::MotionDirection), &swapped);
        }
        1 => t.step4_direct_outcome_sentence = None,
        2 => {
            let invented = format!("\"{}\" is semi-banded", A::Morphology.key());
            t.step3_perceptual_paragraph = t.step3_perceptual_paragraph.replace(&slot(input, A::Morphology), &invented);
        }
        3 => {
            if let Some(s) = &mut t.step5_deep_outcome_paragraph {
                s.push_str(" Nothing else changes.");
            }
        }
        _ => t.step2_temporal_paragraph = format!("- {}", t.step2_temporal_paragraph),
    }
    t
}

/// Composes and checks traces for the first `n` windows of `events`,
/// deliberately corrupting exactly `round(corruption * n)` of them.
pub fn build_cot_dataset(
    events: &[RadarEvent],
    task: TaskKind,
    n: usize,
    corruption: f64,
    seed: u64,
) -> Result<CotDataset> {
    if !(0.0..=1.0).contains(&corruption) {
        return Err(CoreError::Config(format!("corruption rate {corruption} outside [0, 1]")));
    }
    if !task.is_generation() {
        return Err(CoreError::Config(format!("CoT traces are built for generation tasks, not {task}")));
    }
    let mut windows = Vec::new();
    for ev in events {
        if windows.len() >= n {
            break;
        }
        windows.extend(window_records(ev, task)?);
    }
    windows.truncate(n);
    let n = windows.len();
    let n_bad = (corruption * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = vec![false; n];
    for i in sample(&mut rng, n, n_bad) {
        bad[i] = true;
    }

    let mut out = CotDataset { corrupted: n_bad, ..Default::default() };
    for (i, (sample_id, record, projected)) in windows.into_iter().enumerate() {
        let mut trace = compose_trace(&record, &projected, task)?;
        if bad[i] {
            trace = corrupt(&trace, &record, task, i);
        }
        let qc = qc_all(&trace, task, &record, &projected);
        let entry = CotEntry { sample_id, task_kind: task, trace, record, projected, qc };
        if entry.qc.pass() {
            out.entries.push(entry);
        } else {
            out.rejected.push(entry);
        }
    }
    Ok(out)
}
