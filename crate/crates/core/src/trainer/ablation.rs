use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use metrics::MetricReport;
use serde::{Deserialize, Serialize};

use super::batch::TaskSets;
use super::config::TrainConfig;
use super::eval::{evaluate, evaluate_with, EvalOptions, Prediction};
use super::train::train;
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::model::{EncoderVariant, Model, INPUT_FRAMES, TARGET_FRAMES};
use crate::tasks::TaskKind;

/// Which ablation tables to produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub base: TrainConfig,
    /// Understanding-only, generation-only and joint training.
    pub tasks: bool,
    /// Radar sequence encoder against per-frame VAE latents.
    pub encoders: bool,
    /// Guidance scales; the first is the default.
    pub cfg_scales: Vec<f64>,
    pub eval: EvalOptions,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            base: TrainConfig::default(),
            tasks: true,
            encoders: true,
            cfg_scales: vec![2.0, 1.0],
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: String,
    pub label: String,
    #[serde(default)]
    pub default: bool,
    /// `task.metric` to value.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const GEN_COLUMNS: [(&str, &str); 6] = [
    ("nowcast", "mse"),
    ("nowcast", "csi_m"),
    ("nowcast", "csi_p4"),
    ("nowcast", "crps"),
    ("inversion", "csi_16"),
    ("inversion", "rmse"),
];
const UND_COLUMNS: [(&str, &str); 4] = [
    ("frame_understand", "accuracy"),
    ("frame_understand", "rouge_l"),
    ("sequence_understand", "accuracy"),
    ("sequence_understand", "rouge_l"),
];

fn pick(report: &MetricReport, cols: &[(&str, &str)]) -> BTreeMap<String, f64> {
    cols.iter().filter_map(|(t, m)| report.get(t, m).map(|v| (format!("{t}.{m}"), v))).collect()
}

fn only(sets: &TaskSets, keep: impl Fn(TaskKind) -> bool) -> TaskSets {
    sets.iter().filter(|(t, _)| keep(**t)).map(|(t, v)| (*t, v.clone())).collect()
}

/// Mix and weights restricted to the selected tasks, renormalized.
fn restricted(base: &TrainConfig, keep: impl Fn(TaskKind) -> bool) -> Result<TrainConfig> {
    let mut c = base.clone();
    let total: f64 = c.mix.iter().filter(|(t, _)| keep(**t)).map(|(_, r)| r).sum();
    if total <= 0.0 {
        return Err(CoreError::Config("ablation removes every task from the mix".into()));
    }
    for (t, r) in c.mix.iter_mut() {
        *r = if keep(*t) { *r / total } else { 0.0 };
    }
    for (t, l) in c.lambda.iter_mut() {
        if !keep(*t) {
            *l = 0.0;
        }
    }
    Ok(c)
}

impl AblationTable {
    /// Union of metric columns in first-seen order.
    pub fn columns(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut cols = Vec::new();
        for r in &self.rows {
            for k in r.metrics.keys() {
                if seen.insert(k.clone()) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    pub fn tables(&self) -> Vec<String> {
        let mut t: Vec<String> = Vec::new();
        for r in &self.rows {
            if !t.contains(&r.table) {
                t.push(r.table.clone());
            }
        }
        t
    }

    /// Aligned plain-text rendering, one block per table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for table in self.tables() {
            let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.table == table).collect();
            let sub = AblationTable { rows: rows.iter().map(|r| (*r).clone()).collect() };
            let cols = sub.columns();
            let label_w = rows.iter().map(|r| r.label.len() + 2).max().unwrap_or(5).max(5);
            let widths: Vec<usize> = cols.iter().map(|c| c.len().max(8)).collect();
            out.push_str(&format!("[{table}]\n{:label_w$}", "row"));
            for (c, w) in cols.iter().zip(&widths) {
                out.push_str(&format!("  {c:>w$}"));
            }
            out.push('\n');
            for r in rows {
                let label = if r.default { format!("{} *", r.label) } else { r.label.clone() };
                out.push_str(&format!("{label:label_w$}"));
                for (c, w) in cols.iter().zip(&widths) {
                    let cell = r.metrics.get(c).map_or("-".to_string(), |v| format!("{v:.4}"));
                    out.push_str(&format!("  {cell:>w$}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Trains (or reloads a finished cell from `state_dir`) and evaluates.
fn cell(
    key: &str,
    cfg: &TrainConfig,
    train_sets: &TaskSets,
    state_dir: Option<&Path>,
    cache: &mut BTreeMap<String, Model<f32>>,
) -> Result<Model<f32>> {
    if let Some(m) = cache.get(key) {
        return Ok(m.clone());
    }
    let dir = state_dir.map(|d| d.join("cells").join(key));
    if let Some(dir) = &dir {
        let done = dir.join("checkpoint").join("meta.json");
        let digest_file = dir.join("config_digest");
        if done.exists() && fs::read_to_string(&digest_file).is_ok_and(|d| d == cfg.digest()) {
            let (m, _) = crate::model::load_checkpoint(&dir.join("checkpoint"))?;
            cache.insert(key.into(), m.clone());
            return Ok(m);
        }
        fs::create_dir_all(dir)?;
    }
    let out = train(cfg, train_sets, dir.as_deref())?;
    if let Some(dir) = &dir {
        fs::write(dir.join("config_digest"), cfg.digest())?;
    }
    cache.insert(key.into(), out.model.clone());
    Ok(out.model)
}

/// Trains the grid's variants and collects comparison rows. Finished cells in
/// `state_dir` are reused, so an interrupted grid resumes where it stopped.
pub fn ablation_matrix(
    grid: &AblationGrid,
    train_sets: &TaskSets,
    eval_sets: &TaskSets,
    state_dir: Option<&Path>,
) -> Result<AblationTable> {
    grid.base.validate()?;
    let mut table = AblationTable::default();
    let mut cache = BTreeMap::new();
    let joint_cfg = grid.base.clone();
    let default_scale = grid.cfg_scales.first().copied().unwrap_or(grid.eval.cfg_scale);
    let eval_at = |m: &Model<f32>, sets: &TaskSets, scale: f64| -> Result<MetricReport> {
        evaluate(m, sets, &EvalOptions { cfg_scale: scale, ..grid.eval.clone() })
    };
    let baseline_row = |table: &str| -> Result<AblationRow> {
        let gen = only(eval_sets, |t| t == TaskKind::Nowcast);
        let r = evaluate_with(&gen, grid.eval.limit, |s| {
            let last = s.inputs.frame(INPUT_FRAMES - 1);
            Ok(Prediction::Frames(FrameSeq::from_frames(s.inputs.side(), &vec![last; TARGET_FRAMES])?))
        })?;
        Ok(AblationRow {
            table: table.into(),
            label: "Persistence".into(),
            default: false,
            metrics: pick(&r, &GEN_COLUMNS),
        })
    };

    if grid.tasks {
        let variants: [(&str, fn(TaskKind) -> bool); 3] =
            [("U", |t| !t.is_generation()), ("G", |t| t.is_generation()), ("U+G", |_| true)];
        for (label, keep) in variants {
            let cfg = if label == "U+G" { joint_cfg.clone() } else { restricted(&grid.base, keep)? };
            let key = if label == "U+G" { "joint".to_string() } else { format!("tasks-{}", label.to_lowercase()) };
            let m = cell(&key, &cfg, &only(train_sets, keep), state_dir, &mut cache)?;
            let r = eval_at(&m, &only(eval_sets, keep), default_scale)?;
            let mut metrics = BTreeMap::new();
            if label != "U" {
                metrics.extend(pick(&r, &GEN_COLUMNS));
            }
            if label != "G" {
                metrics.extend(pick(&r, &UND_COLUMNS));
            }
            table.rows.push(AblationRow {
                table: "tasks".into(),
                label: label.into(),
                default: label == "U+G",
                metrics,
            });
        }
    }

    if grid.encoders {
        let gen = only(eval_sets, |t| t == TaskKind::Nowcast);
        for variant in [EncoderVariant::VaeOnly, EncoderVariant::RadarSeq] {
            let cfg = TrainConfig { encoder_variant: variant, ..joint_cfg.clone() };
            let key = if variant == grid.base.encoder_variant {
                "joint".to_string()
            } else {
                format!("encoder-{variant:?}").to_lowercase()
            };
            let m = cell(&key, &cfg, train_sets, state_dir, &mut cache)?;
            let r = eval_at(&m, &gen, default_scale)?;
            table.rows.push(AblationRow {
                table: "encoder".into(),
                label: variant.label().into(),
                default: variant == EncoderVariant::RadarSeq,
                metrics: pick(&r, &GEN_COLUMNS),
            });
        }
    }

    if !grid.cfg_scales.is_empty() {
        let m = cell("joint", &joint_cfg, train_sets, state_dir, &mut cache)?;
        let gen = only(eval_sets, TaskKind::is_generation);
        for (i, &s) in grid.cfg_scales.iter().enumerate() {
            let r = eval_at(&m, &gen, s)?;
            table.rows.push(AblationRow {
                table: "cfg".into(),
                label: format!("CFG={s}"),
                default: i == 0,
                metrics: pick(&r, &GEN_COLUMNS),
            });
        }
    }
    if grid.tasks || grid.encoders {
        table.rows.push(baseline_row("baselines")?);
    }
    Ok(table)
}
