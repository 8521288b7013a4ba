use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::tasks::{TaskKind, TaskSample};

pub type TaskSets = BTreeMap<TaskKind, Vec<TaskSample>>;

/// One batch slot: a sample reference plus whether its conditioning is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub task: TaskKind,
    pub index: usize,
    pub drop_prompt: bool,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(step as u64 + 1);
    r
}

/// Systematic (stratified) draw of `size` tasks from the mix: one uniform offset,
/// then evenly spaced points on the cumulative ratios. Each task gets the floor or
/// ceiling of its expected count.
fn draw_tasks(mix: &[(TaskKind, f64)], size: usize, rng: &mut ChaCha8Rng) -> Vec<TaskKind> {
    let u: f64 = rng.random();
    let mut out = Vec::with_capacity(size);
    let mut cum = 0.0;
    let mut i = 0;
    for (t, r) in mix {
        cum += r;
        while i < size && (u + i as f64) / (size as f64) < cum {
            out.push(*t);
            i += 1;
        }
    }
    while out.len() < size {
        out.push(mix.last().expect("non-empty mix").0);
    }
    out
}

/// Deterministic batch for `step`: tasks by stratified mix, samples uniformly
/// within each task, and prompt dropout on generation samples.
pub fn build_batch(
    sets: &TaskSets,
    mix: &BTreeMap<TaskKind, f64>,
    size: usize,
    prompt_dropout: f64,
    seed: u64,
    step: usize,
) -> Result<Vec<BatchItem>> {
    let active: Vec<(TaskKind, f64)> = mix.iter().filter(|(_, &r)| r > 0.0).map(|(t, r)| (*t, *r)).collect();
    if active.is_empty() {
        return Err(CoreError::Config("mix has no task with a positive ratio".into()));
    }
    for (t, _) in &active {
        if sets.get(t).is_none_or(|s| s.is_empty()) {
            return Err(CoreError::Config(format!("mix selects {t} but there are no {t} samples")));
        }
    }
    let total: f64 = active.iter().map(|a| a.1).sum();
    let norm: Vec<(TaskKind, f64)> = active.iter().map(|(t, r)| (*t, r / total)).collect();
    let mut rng = step_rng(seed, step);
    let tasks = draw_tasks(&norm, size, &mut rng);
    Ok(tasks
        .into_iter()
        .map(|task| {
            let index = rng.random_range(0..sets[&task].len());
            let drop_prompt = task.is_generation() && rng.random_bool(prompt_dropout);
            BatchItem { task, index, drop_prompt }
        })
        .collect())
}
