use std::collections::BTreeMap;

use metrics::{
    attribute_accuracy, crps_ensemble, csi, csi_mean, mse, pooled_csi, psnr, radar_score, rmse, rouge_l, ssim,
    MetricReport, SsimParams, CSI_THRESHOLDS,
};
use serde::{Deserialize, Serialize};

use super::batch::TaskSets;
use crate::cot::{annotate_frame, annotate_from_frames, compose_trace, Attribute, CoTTrace};
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::model::{prompt_text, Model, INPUT_FRAMES, TARGET_FRAMES};
use crate::tasks::{TaskKind, TaskSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub cfg_scale: f64,
    pub max_len: usize,
    /// Prepend a reasoning trace composed from the inputs to generation prompts.
    pub think: bool,
    /// At most this many samples per task.
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { cfg_scale: 2.0, max_len: 160, think: false, limit: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Frames(FrameSeq),
    Text(String),
}

/// Reasoning trace composed from what the inputs show: the frame annotator for
/// radar inputs, and for inversion a radar proxy read off the sharper infrared channel.
pub fn think_trace(task: TaskKind, inputs: &FrameSeq) -> Result<CoTTrace> {
    match task {
        TaskKind::Nowcast => {
            let rec = annotate_from_frames(inputs)?;
            compose_trace(&rec, &rec, task)
        }
        TaskKind::Inversion => {
            let proxy: Vec<f32> = inputs.frame(0).iter().map(|v| 255.0 - v).collect();
            let rec = annotate_frame(&proxy, inputs.side());
            compose_trace(&rec, &rec, task)
        }
        _ => Err(CoreError::Config(format!("thinking traces are composed for generation tasks, not {task}"))),
    }
}

/// Task prompt, optionally preceded by the thinking trace.
pub fn generation_prompt(task: TaskKind, inputs: &FrameSeq, think: bool) -> Result<(String, Option<CoTTrace>)> {
    if !think {
        return Ok((prompt_text(task), None));
    }
    let trace = think_trace(task, inputs)?;
    Ok((format!("{}\n{}", trace.render(), prompt_text(task)), Some(trace)))
}

/// Runs the model on one sample.
pub fn predict(model: &Model<f32>, s: &TaskSample, opts: &EvalOptions) -> Result<Prediction> {
    if s.task.is_generation() {
        let (prompt, _) = generation_prompt(s.task, &s.inputs, opts.think)?;
        Ok(Prediction::Frames(model.forward_generate(s.task, &s.inputs, &prompt, opts.cfg_scale)?.frames))
    } else {
        Ok(Prediction::Text(model.forward_understand(s.task, &s.inputs, &s.prompt(), opts.max_len, 0.0, 0)?))
    }
}

/// Field metrics for a predicted stack against observations.
pub fn field_metrics(pred: &FrameSeq, obs: &FrameSeq) -> Result<BTreeMap<String, f64>> {
    if pred.len() != obs.len() || pred.side() != obs.side() {
        return Err(CoreError::Shape(format!(
            "prediction {}x{} vs observation {}x{}",
            pred.len(),
            pred.side(),
            obs.len(),
            obs.side()
        )));
    }
    let side = obs.side();
    let (p, o) = (pred.data(), obs.data());
    let mut m = BTreeMap::new();
    m.insert("mse".to_string(), mse(p, o)?);
    m.insert("rmse".to_string(), rmse(p, o)?);
    m.insert("csi_m".to_string(), csi_mean(p, o)?);
    for tau in CSI_THRESHOLDS {
        m.insert(format!("csi_{tau}"), csi(p, o, tau)?);
    }
    m.insert("crps".to_string(), crps_ensemble(&[p], o)?);
    m.insert("psnr".to_string(), psnr(p, o, 255.0)?);
    let n = obs.len() as f64;
    let mut pooled = [0.0; 2];
    let mut ss = 0.0;
    let params = SsimParams::default();
    for (pf, of) in pred.frames().zip(obs.frames()) {
        for (slot, s) in pooled.iter_mut().zip([4usize, 16]) {
            if side % s == 0 {
                *slot += pooled_csi(pf, of, side, side, s)? / n;
            }
        }
        if side >= params.window {
            ss += ssim(pf, of, side, side, &params)? / n;
        }
    }
    m.insert("csi_p4".to_string(), pooled[0]);
    m.insert("csi_p16".to_string(), pooled[1]);
    if side >= params.window {
        m.insert("ssim".to_string(), ss);
    }
    Ok(m)
}

/// Ordinal rating from how many frame-annotated attributes of the prediction
/// match those of the observation.
pub fn attribute_rating(pred: &FrameSeq, obs: &FrameSeq) -> Result<&'static str> {
    let (attrs, a, b): (&[Attribute], _, _) = if obs.len() >= 2 {
        (
            &[
                Attribute::MotionDirection,
                Attribute::MaxPixelLevel,
                Attribute::InitialPosition,
                Attribute::IntensityEvolution,
            ],
            annotate_from_frames(pred)?,
            annotate_from_frames(obs)?,
        )
    } else {
        (
            &[Attribute::Morphology, Attribute::MaxPixelLevel, Attribute::InitialPosition],
            annotate_frame(pred.frame(0), pred.side()),
            annotate_frame(obs.frame(0), obs.side()),
        )
    };
    let hit = attrs.iter().filter(|x| a.choice(**x) == b.choice(**x)).count() as f64 / attrs.len() as f64;
    Ok(match hit {
        h if h >= 1.0 => "great",
        h if h >= 0.75 => "good",
        h if h >= 0.5 => "fair",
        _ => "poor",
    })
}

fn mean_into(acc: &mut BTreeMap<String, f64>, m: &BTreeMap<String, f64>, n: usize) {
    for (k, v) in m {
        *acc.entry(k.clone()).or_insert(0.0) += v / n as f64;
    }
}

/// Scores `predictor` on every task present in `sets`.
pub fn evaluate_with(
    sets: &TaskSets,
    limit: Option<usize>,
    mut predictor: impl FnMut(&TaskSample) -> Result<Prediction>,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for (task, samples) in sets {
        let samples = &samples[..limit.unwrap_or(usize::MAX).min(samples.len())];
        if samples.is_empty() {
            continue;
        }
        let n = samples.len();
        report.n_samples += n;
        let mut acc = BTreeMap::new();
        let mut base = BTreeMap::new();
        let mut ratings = Vec::new();
        for s in samples {
            match (predictor(s)?, task.is_generation()) {
                (Prediction::Frames(pred), true) => {
                    let obs =
                        s.target_frames.as_ref().ok_or_else(|| CoreError::Config(format!("{} lacks targets", s.id)))?;
                    mean_into(&mut acc, &field_metrics(&pred, obs)?, n);
                    ratings.push(attribute_rating(&pred, obs)?);
                    let baseline = match task {
                        TaskKind::Nowcast => {
                            let last = s.inputs.frame(INPUT_FRAMES - 1);
                            FrameSeq::from_frames(obs.side(), &vec![last; TARGET_FRAMES])?
                        }
                        _ => FrameSeq::zeros(obs.len(), obs.side()),
                    };
                    mean_into(&mut base, &field_metrics(&baseline, obs)?, n);
                }
                (Prediction::Text(text), false) => {
                    let target = s.target_text.as_deref().unwrap_or_default();
                    let score = attribute_accuracy(&text, &s.record.pairs());
                    let mut m = BTreeMap::new();
                    m.insert("accuracy".to_string(), score.overall);
                    m.insert("parse_failure".to_string(), f64::from(u8::from(score.parse_failure)));
                    m.insert("rouge_l".to_string(), rouge_l(&text, target));
                    if *task == TaskKind::FrameUnderstand {
                        let st: Vec<bool> = score
                            .per_attribute
                            .iter()
                            .zip(Attribute::ALL)
                            .filter(|(_, a)| a.is_static())
                            .map(|((_, ok), _)| *ok)
                            .collect();
                        m.insert(
                            "static_accuracy".to_string(),
                            st.iter().filter(|b| **b).count() as f64 / st.len() as f64,
                        );
                    }
                    mean_into(&mut acc, &m, n);
                }
                _ => return Err(CoreError::Config(format!("prediction kind does not match task {task}"))),
            }
        }
        if !ratings.is_empty() {
            acc.insert("radar_score_attr".to_string(), radar_score(&ratings)?);
        }
        for (k, v) in acc {
            report.set(task.name(), &k, v);
        }
        let base_name = match task {
            TaskKind::Nowcast => "persistence",
            _ => "zero_inversion",
        };
        for (k, v) in base {
            report.set_baseline(base_name, &k, v);
        }
    }
    if report.n_samples == 0 {
        return Err(CoreError::Empty("evaluation set".into()));
    }
    report.validate()?;
    Ok(report)
}

/// Model predictions scored against every task in `sets`.
pub fn evaluate(model: &Model<f32>, sets: &TaskSets, opts: &EvalOptions) -> Result<MetricReport> {
    evaluate_with(sets, opts.limit, |s| predict(model, s, opts))
}

/// Ground truth returned as the prediction; scores are perfect by construction.
pub fn oracle_prediction(s: &TaskSample) -> Result<Prediction> {
    match (&s.target_frames, &s.target_text) {
        (Some(f), _) => Ok(Prediction::Frames(f.clone())),
        (_, Some(t)) => Ok(Prediction::Text(t.clone())),
        _ => Err(CoreError::Config(format!("{} has no target", s.id))),
    }
}
