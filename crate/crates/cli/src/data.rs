//! Synthetic dataset manifests: generation and loading.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use numerics::owtr;
use omniweather::cot::AttributeRecord;
use omniweather::stormsim::{
    derive_satellite, filter_low_signal, synth_event, GeneratorConfig, RadarEvent, StormParams, CADENCE_MIN,
    LONG_EVENT, SHORT_EVENT,
};
use omniweather::FrameSeq;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{read_json, user, write_json};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EventMode {
    /// 22 frames, one window per event.
    #[default]
    Short,
    /// 49 frames, three overlapping windows per event.
    Long,
}

impl EventMode {
    pub fn frames(self) -> usize {
        match self {
            EventMode::Short => SHORT_EVENT,
            EventMode::Long => LONG_EVENT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub n_events: usize,
    pub mode: EventMode,
    pub seed: u64,
    /// Drop events below the coverage threshold and draw replacements.
    pub filter_low_signal: bool,
    /// Frame count is taken from `mode`.
    pub generator: GeneratorConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            n_events: 10,
            mode: EventMode::Short,
            seed: 0,
            filter_low_signal: true,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventFiles {
    pub radar: String,
    pub ir069: String,
    pub ir107: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub mode: EventMode,
    pub files: EventFiles,
    pub truth: AttributeRecord,
    pub params: StormParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub side: usize,
    pub frames: usize,
    pub cadence_min: u32,
    /// Candidates rejected by the low-signal filter.
    pub dropped_low_signal: usize,
    pub events: Vec<ManifestEntry>,
}

/// Seed of the `k`-th candidate event for a base seed.
pub fn event_seed(base: u64, k: u64) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(k)
}

/// Generates the first `n_events` events passing the filter, in seed order.
pub fn generate(cfg: &GenDataConfig) -> Result<(Vec<RadarEvent>, usize)> {
    let gen = GeneratorConfig { frames: cfg.mode.frames(), ..cfg.generator.clone() };
    let max_candidates = cfg.n_events * 10 + 100;
    let mut kept = Vec::with_capacity(cfg.n_events);
    let mut dropped = 0;
    let mut next = 0;
    while kept.len() < cfg.n_events {
        if next >= max_candidates {
            bail!(user(format!("only {} of {} events passed the low-signal filter", kept.len(), cfg.n_events)));
        }
        let chunk: Vec<u64> =
            (next..(next + cfg.n_events - kept.len()).min(max_candidates)).map(|k| k as u64).collect();
        next += chunk.len();
        let events = chunk
            .par_iter()
            .map(|&k| synth_event(event_seed(cfg.seed, k), &gen))
            .collect::<omniweather::Result<Vec<_>>>()
            .map_err(|e| user(e.to_string()))?;
        for ev in events {
            if !cfg.filter_low_signal || filter_low_signal(&ev.frames) {
                kept.push(ev);
            } else {
                dropped += 1;
            }
        }
    }
    kept.truncate(cfg.n_events);
    Ok((kept, dropped))
}

fn event_id(seed: u64) -> String {
    format!("ev{seed}")
}

/// Writes the OWTR files of every event under `dir/events` and the manifest at `dir/manifest.json`.
pub fn write_dataset(
    dir: &Path,
    cfg: &GenDataConfig,
    events: &[RadarEvent],
    dropped: usize,
    digest: &str,
) -> Result<Manifest> {
    let ev_dir = dir.join("events");
    fs::create_dir_all(&ev_dir)?;
    let entries = events
        .par_iter()
        .map(|ev| -> Result<ManifestEntry> {
            let id = event_id(ev.params.seed);
            let (ir069, ir107) = derive_satellite(&ev.frames);
            let files = EventFiles {
                radar: format!("events/{id}.radar.owtr"),
                ir069: format!("events/{id}.ir069.owtr"),
                ir107: format!("events/{id}.ir107.owtr"),
            };
            for (rel, frames) in [(&files.radar, &ev.frames), (&files.ir069, &ir069), (&files.ir107, &ir107)] {
                owtr::write(dir.join(rel), &frames.to_tensor())?;
            }
            Ok(ManifestEntry {
                id,
                seed: ev.params.seed,
                mode: cfg.mode,
                files,
                truth: ev.truth.clone(),
                params: ev.params.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config_digest: digest.to_string(),
        side: cfg.generator.side,
        frames: cfg.mode.frames(),
        cadence_min: CADENCE_MIN,
        dropped_low_signal: dropped,
        events: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Accepts a manifest file or a directory containing `manifest.json`.
pub fn manifest_path(p: &Path) -> Result<std::path::PathBuf> {
    let path = if p.is_dir() { p.join("manifest.json") } else { p.to_path_buf() };
    if !path.is_file() {
        bail!(user(format!("manifest {} does not exist", path.display())));
    }
    Ok(path)
}

/// Loads a manifest and its radar frames.
pub fn load_events(p: &Path) -> Result<(Manifest, Vec<RadarEvent>)> {
    let path = manifest_path(p)?;
    let manifest: Manifest = read_json(&path).map_err(|e| user(format!("{e:#}")))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let events = manifest
        .events
        .par_iter()
        .map(|e| -> Result<RadarEvent> {
            let file = root.join(&e.files.radar);
            let t = owtr::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let frames = FrameSeq::from_tensor(&t)?;
            if frames.side() != manifest.side || frames.len() != manifest.frames {
                bail!(user(format!(
                    "{} has shape {:?}, manifest says {} frames of side {}",
                    file.display(),
                    t.shape(),
                    manifest.frames,
                    manifest.side
                )));
            }
            Ok(RadarEvent {
                frames,
                params: e.params.clone(),
                truth: e.truth.clone(),
                cadence_min: manifest.cadence_min,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, events))
}
