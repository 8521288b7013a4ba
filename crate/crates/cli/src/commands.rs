//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use metrics::MetricReport;
use numerics::owtr;
use omniweather::cot::build_cot_dataset;
use omniweather::model::load_checkpoint;
use omniweather::stormsim::render_png;
use omniweather::tasks::{build_task_sets, TaskKind, TaskSample};
use omniweather::trainer::{
    ablation_matrix, evaluate_with, generation_prompt, oracle_prediction, predict, AblationGrid, EvalOptions,
    Prediction, TaskSets, TrainConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{read_json, resolve, run_digest, user, write_json, Sources};
use crate::data::{generate, load_events, manifest_path, write_dataset, EventMode, GenDataConfig, Manifest};
use crate::output::{write_atomic, write_run_files, Staging};
use crate::Global;

fn sources(g: &Global) -> Sources<'_> {
    Sources { file: g.config.as_deref(), set: &g.set, seed: g.seed }
}

fn out_dir(g: &Global, default: &str) -> std::path::PathBuf {
    g.out.clone().unwrap_or_else(|| Path::new("out").join(default))
}

fn opt<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|v| serde_json::to_value(v).expect("flag value serializes"))
}

/// Identifies a manifest input by the digest recorded in it.
fn manifest_id(m: &Manifest) -> Value {
    json!({ "manifest": m.config_digest, "events": m.events.len() })
}

fn checkpoint_id(dir: &Path) -> Result<Value> {
    let cfg: Value =
        read_json(&dir.join("config.json")).map_err(|e| user(format!("checkpoint {}: {e:#}", dir.display())))?;
    let meta: Value =
        read_json(&dir.join("meta.json")).map_err(|e| user(format!("checkpoint {}: {e:#}", dir.display())))?;
    Ok(json!({ "config": cfg, "step": meta["step"], "losses": meta["loss_history"] }))
}

fn load_model(dir: &Path) -> Result<omniweather::model::Model<f32>> {
    if !dir.join("meta.json").is_file() {
        bail!(user(format!("{} is not a checkpoint directory", dir.display())));
    }
    Ok(load_checkpoint(dir)?.0)
}

pub fn gen_data(g: &Global, n_events: Option<usize>, mode: Option<EventMode>) -> Result<()> {
    let r = resolve::<GenDataConfig>(&sources(g), "seed", &[("n_events", opt(n_events)), ("mode", opt(mode))])?;
    let digest = run_digest("gen-data", &r.value, Value::Null);
    let (events, dropped) = generate(&r.config)?;
    let stage = Staging::new(&out_dir(g, "data"))?;
    let m = write_dataset(stage.path(), &r.config, &events, dropped, &digest)?;
    write_run_files(stage.path(), &r.value, &digest)?;
    let dest = stage.commit()?;
    println!(
        "{} events ({} dropped as low-signal) -> {}",
        m.events.len(),
        dropped,
        dest.join("manifest.json").display()
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CotConfig {
    pub task: TaskKind,
    /// Maximum number of windows; all when unset.
    pub n: Option<usize>,
    pub corruption: f64,
    pub seed: u64,
}

impl Default for CotConfig {
    fn default() -> Self {
        CotConfig { task: TaskKind::Nowcast, n: None, corruption: 0.0, seed: 0 }
    }
}

pub fn build_cot(
    g: &Global,
    manifest: &Path,
    task: Option<TaskKind>,
    corruption: Option<f64>,
    n: Option<usize>,
) -> Result<()> {
    let r = resolve::<CotConfig>(
        &sources(g),
        "seed",
        &[("task", opt(task)), ("corruption", opt(corruption)), ("n", opt(n))],
    )?;
    let (m, events) = load_events(manifest)?;
    let c = &r.config;
    let digest = run_digest("build-cot", &r.value, manifest_id(&m));
    let ds = build_cot_dataset(&events, c.task, c.n.unwrap_or(usize::MAX), c.corruption, c.seed)?;
    let stage = Staging::new(&out_dir(g, "cot"))?;
    ds.write_jsonl(&stage.path().join("cot.jsonl"))?;
    omniweather::cot::dataset::write_jsonl(&stage.path().join("rejected.jsonl"), &ds.rejected)?;
    let stage_fail = |f: fn(&omniweather::cot::QCReport) -> bool| ds.rejected.iter().filter(|e| !f(&e.qc)).count();
    let summary = json!({
        "config_digest": digest,
        "task": c.task,
        "attempted": ds.attempted(),
        "passed": ds.entries.len(),
        "rejected": ds.rejected.len(),
        "corrupted": ds.corrupted,
        "pass_rate": ds.pass_rate(),
        "rejected_by_stage": {
            "structure": stage_fail(|q| q.structure_pass),
            "causal_alignment": stage_fail(|q| q.causal_alignment_pass),
            "terminology": stage_fail(|q| q.terminology_pass),
        },
    });
    write_json(&stage.path().join("summary.json"), &summary)?;
    write_run_files(stage.path(), &r.value, &digest)?;
    for e in &ds.rejected {
        eprintln!("rejected {}: {}", e.sample_id, e.qc.reasons.join("; "));
    }
    let dest = stage.commit()?;
    println!(
        "{} of {} traces passed (rate {:.4}) -> {}",
        ds.entries.len(),
        ds.attempted(),
        ds.pass_rate(),
        dest.display()
    );
    Ok(())
}

fn task_sets(manifest: &Path) -> Result<(Manifest, TaskSets)> {
    let (m, events) = load_events(manifest)?;
    let sets = build_task_sets(&events)?;
    Ok((m, sets))
}

pub fn train(g: &Global, data: &Path) -> Result<()> {
    let r = resolve::<TrainConfig>(&sources(g), "seed", &[])?;
    r.config.validate()?;
    let (m, sets) = task_sets(data)?;
    if m.side != r.config.model.side {
        bail!(user(format!("manifest side {} does not match model.side {}", m.side, r.config.model.side)));
    }
    let digest = run_digest("train", &r.value, manifest_id(&m));
    let stage = Staging::new(&out_dir(g, "train"))?;
    let outcome = omniweather::trainer::train(&r.config, &sets, Some(stage.path()))?;
    let log = &outcome.log;
    let n = log.joint().count();
    let summary = json!({
        "config_digest": digest,
        "steps": n,
        "first_50_mean": log.mean_total(0, 50),
        "last_50_mean": log.mean_total(n.saturating_sub(50), 50),
        "vae_steps": log.steps.len() - n,
    });
    write_json(&stage.path().join("summary.json"), &summary)?;
    write_run_files(stage.path(), &r.value, &digest)?;
    let dest = stage.commit()?;
    println!("trained {n} steps -> {}", dest.join("checkpoint").display());
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(flatten)]
    pub options: EvalOptions,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextPrediction {
    pub sample_id: String,
    pub task: TaskKind,
    pub prediction: String,
    pub reference: String,
}

fn limited(sets: &TaskSets, limit: Option<usize>) -> Vec<&TaskSample> {
    sets.values().flat_map(|v| v.iter().take(limit.unwrap_or(usize::MAX))).collect()
}

pub fn eval(
    g: &Global,
    manifest: &Path,
    checkpoint: Option<&Path>,
    think: bool,
    cfg_scale: Option<f64>,
    limit: Option<usize>,
) -> Result<()> {
    let flags = [("think", think.then_some(Value::Bool(true))), ("cfg_scale", opt(cfg_scale)), ("limit", opt(limit))];
    let r = resolve::<EvalConfig>(&sources(g), "seed", &flags)?;
    let opts = &r.config.options;
    let (m, sets) = task_sets(manifest)?;
    let ckpt = checkpoint.map(checkpoint_id).transpose()?;
    let digest = run_digest(
        "eval",
        &r.value,
        json!({ "data": manifest_id(&m), "checkpoint": ckpt.clone().unwrap_or(json!("oracle")) }),
    );
    let model = checkpoint.map(load_model).transpose()?;
    if let Some(model) = &model {
        if model.cfg.side != m.side {
            bail!(user(format!("checkpoint side {} does not match manifest side {}", model.cfg.side, m.side)));
        }
    }
    let samples = limited(&sets, opts.limit);
    let preds: Vec<Prediction> = samples
        .par_iter()
        .map(|s| match &model {
            Some(model) => predict(model, s, opts),
            None => oracle_prediction(s),
        })
        .collect::<omniweather::Result<_>>()?;
    let by_id: BTreeMap<&str, &Prediction> = samples.iter().map(|s| s.id.as_str()).zip(&preds).collect();
    let mut report: MetricReport = evaluate_with(&sets, opts.limit, |s| Ok(by_id[s.id.as_str()].clone()))?;
    report.config_digest = digest.clone();

    let texts: Vec<TextPrediction> = samples
        .iter()
        .zip(&preds)
        .filter_map(|(s, p)| match p {
            Prediction::Text(t) => Some(TextPrediction {
                sample_id: s.id.clone(),
                task: s.task,
                prediction: t.clone(),
                reference: s.target_text.clone().unwrap_or_default(),
            }),
            Prediction::Frames(_) => None,
        })
        .collect();
    let stage = Staging::new(&out_dir(g, "eval"))?;
    write_json(&stage.path().join("report.json"), &report)?;
    omniweather::cot::dataset::write_jsonl(&stage.path().join("predictions.jsonl"), &texts)?;
    write_run_files(stage.path(), &r.value, &digest)?;
    let dest = stage.commit()?;
    for (task, metrics) in &report.tasks {
        let keys = ["mse", "csi_m", "csi_16", "accuracy", "rouge_l"];
        let shown: Vec<String> = keys.iter().filter_map(|k| metrics.get(*k).map(|v| format!("{k}={v:.4}"))).collect();
        println!("{task}: {}", shown.join(" "));
    }
    println!("report -> {}", dest.join("report.json").display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub cfg_scale: f64,
    pub think: bool,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        let e = EvalOptions::default();
        InferConfig { cfg_scale: e.cfg_scale, think: false, max_len: e.max_len, temperature: 0.0, seed: 0 }
    }
}

pub fn infer(
    g: &Global,
    manifest: &Path,
    checkpoint: &Path,
    sample: &str,
    think: bool,
    cfg_scale: Option<f64>,
) -> Result<()> {
    let flags = [("think", think.then_some(Value::Bool(true))), ("cfg_scale", opt(cfg_scale))];
    let r = resolve::<InferConfig>(&sources(g), "seed", &flags)?;
    let c = &r.config;
    let (m, sets) = task_sets(manifest)?;
    let s = sets.values().flatten().find(|s| s.id == sample).ok_or_else(|| {
        user(format!(
            "no sample {sample:?} in {}",
            manifest_path(manifest).map(|p| p.display().to_string()).unwrap_or_default()
        ))
    })?;
    let digest = run_digest(
        "infer",
        &r.value,
        json!({ "data": manifest_id(&m), "sample": sample, "checkpoint": checkpoint_id(checkpoint)? }),
    );
    let model = load_model(checkpoint)?;
    let stage = Staging::new(&out_dir(g, "infer"))?;
    let dir = stage.path();
    let mut info = json!({ "sample_id": s.id, "task": s.task, "config_digest": digest });
    if s.task.is_generation() {
        let (prompt, trace) = generation_prompt(s.task, &s.inputs, c.think)?;
        let out = model.forward_generate(s.task, &s.inputs, &prompt, c.cfg_scale)?;
        render_png(&out.frames, dir, "frame")?;
        owtr::write(dir.join("prediction.owtr"), &out.frames.to_tensor())?;
        owtr::write(dir.join("latents.owtr"), &out.latents)?;
        fs::write(dir.join("prompt.txt"), format!("{prompt}\n"))?;
        if let Some(trace) = trace {
            fs::write(dir.join("trace.txt"), format!("{}\n", trace.render()))?;
        }
        if let Some(obs) = &s.target_frames {
            info["metrics"] = serde_json::to_value(omniweather::trainer::field_metrics(&out.frames, obs)?)?;
        }
    } else {
        let text = model.forward_understand(s.task, &s.inputs, &s.prompt(), c.max_len, c.temperature, c.seed)?;
        fs::write(dir.join("answer.txt"), format!("{text}\n"))?;
        fs::write(dir.join("prompt.txt"), format!("{}\n", s.prompt()))?;
        let score = metrics::attribute_accuracy(&text, &s.record.pairs());
        info["accuracy"] = json!(score.overall);
    }
    write_json(&dir.join("sample.json"), &info)?;
    write_run_files(dir, &r.value, &digest)?;
    let dest = stage.commit()?;
    println!("{} -> {}", s.id, dest.display());
    Ok(())
}

pub fn ablate(g: &Global, data: &Path, eval_data: &Path) -> Result<()> {
    let r = resolve::<AblationGrid>(&sources(g), "base.seed", &[])?;
    r.config.base.validate()?;
    let (m, train_sets) = task_sets(data)?;
    let (em, eval_sets) = task_sets(eval_data)?;
    let digest = run_digest("ablate", &r.value, json!({ "data": manifest_id(&m), "eval_data": manifest_id(&em) }));
    let dir = out_dir(g, "ablate");
    // Finished cells persist under `dir/cells` so an interrupted grid resumes;
    // the tables themselves are replaced atomically.
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let table = ablation_matrix(&r.config, &train_sets, &eval_sets, Some(&dir))?;
    let text = table.render_text();
    let doc = json!({ "config_digest": digest, "columns": table.columns(), "rows": table.rows });
    write_atomic(&dir.join("ablation.json"), format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
    write_atomic(&dir.join("ablation.txt"), text.as_bytes())?;
    write_atomic(&dir.join("config.json"), format!("{}\n", serde_json::to_string_pretty(&r.value)?).as_bytes())?;
    write_atomic(&dir.join("config_digest"), format!("{digest}\n").as_bytes())?;
    print!("{text}");
    Ok(())
}
