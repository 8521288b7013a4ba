use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use numerics::{
    adamw_step_masked, lr_at, AdamWConfig, GradStore, Graph, NodeId, OptimState, ParamId, Real, Schedule, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::batch::{build_batch, BatchItem, TaskSets};
use super::config::TrainConfig;
use crate::cot::dataset::write_jsonl;
use crate::error::{CoreError, Result};
use crate::model::{save_checkpoint, CheckpointMeta, Model, Vocab, COT};
use crate::tasks::{TaskKind, TaskSample};

/// Batch loss with its per-task parts. `components[t]` is the sum of task
/// `t`'s sample losses divided by the batch size, so
/// `total == sum_t lambda_t * components[t]` (with `cot` weighted by `cot_weight`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// `vae` for reconstruction pre-training, `joint` for the main loop.
    pub stage: String,
    pub step: usize,
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    pub fn joint(&self) -> impl Iterator<Item = &StepLog> {
        self.steps.iter().filter(|s| s.stage == "joint")
    }

    /// Mean joint loss over steps `[start, start + len)`.
    pub fn mean_total(&self, start: usize, len: usize) -> Option<f64> {
        let v: Vec<f64> = self.joint().skip(start).take(len).map(|s| s.total).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.steps)
    }

    /// The log with wall times zeroed, for reproducibility comparisons.
    pub fn without_times(&self) -> TrainLog {
        let steps = self.steps.iter().map(|s| StepLog { wall_ms: 0.0, ..s.clone() }).collect();
        TrainLog { steps }
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: TrainLog,
}

/// Prompt ids for a sample, or `None` for the unconditional branch.
fn prompt_ids<T: Real>(model: &Model<T>, s: &TaskSample, drop: bool) -> Option<Vec<usize>> {
    (!drop).then(|| model.vocab.tokenize(&s.prompt()))
}

/// Unweighted loss of one sample in `g`.
pub fn sample_loss<T: Real>(model: &Model<T>, g: &mut Graph<T>, s: &TaskSample, drop_prompt: bool) -> Result<NodeId> {
    if s.task.is_generation() {
        let targets =
            s.target_frames.as_ref().ok_or_else(|| CoreError::Config(format!("{} lacks target frames", s.id)))?;
        let ids = prompt_ids(model, s, drop_prompt);
        model.gen_loss(g, s.task, &s.inputs, ids.as_deref(), targets)
    } else {
        let text = s.target_text.as_deref().ok_or_else(|| CoreError::Config(format!("{} lacks target text", s.id)))?;
        let ids = model.vocab.tokenize(&s.prompt());
        let answer = model.vocab.tokenize(text);
        model.text_loss(g, s.task, &s.inputs, &ids, &answer)
    }
}

/// Auxiliary reasoning-trace loss of a generation sample.
fn cot_loss<T: Real>(model: &Model<T>, g: &mut Graph<T>, s: &TaskSample, trace: &str) -> Result<NodeId> {
    let prompt = model.vocab.tokenize(&format!("{COT} {}", s.prompt()));
    let answer = model.vocab.tokenize(trace);
    model.text_loss(g, s.task, &s.inputs, &prompt, &answer)
}

/// Receives each weighted per-sample parameter gradient.
pub type GradSink<'a, T> = &'a mut dyn FnMut(ParamId, &[T]);

/// Evaluates (and with `grads`, differentiates) the weighted batch loss.
/// Samples whose weight is zero contribute to the components but get no backward pass.
pub fn loss_joint(
    model: &Model<f32>,
    sets: &TaskSets,
    batch: &[BatchItem],
    cfg: &TrainConfig,
    grads: Option<&mut GradStore>,
) -> Result<LossBreakdown> {
    match grads {
        Some(store) => loss_joint_with(model, sets, batch, cfg, Some(&mut |id, g: &[f32]| store.accumulate(id, g))),
        None => loss_joint_with(model, sets, batch, cfg, None),
    }
}

/// [`loss_joint`] for any scalar type, with gradients handed to `sink`.
pub fn loss_joint_with<T: Real>(
    model: &Model<T>,
    sets: &TaskSets,
    batch: &[BatchItem],
    cfg: &TrainConfig,
    mut sink: Option<GradSink<'_, T>>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(CoreError::Empty("batch".into()));
    }
    let b = batch.len() as f64;
    let mut out = LossBreakdown::default();
    for t in TaskKind::ALL {
        if batch.iter().any(|i| i.task == t) {
            out.components.insert(t.name().into(), 0.0);
        }
    }
    let mut run = |name: &str, weight: f64, f: &dyn Fn(&mut Graph<T>) -> Result<NodeId>| -> Result<()> {
        let backprop = sink.is_some() && weight > 0.0;
        let mut g = if backprop { Graph::new() } else { Graph::inference() };
        let loss = f(&mut g)?;
        let v = g.value(loss).item().map_or(f64::NAN, |x| x.as_f64());
        if !v.is_finite() {
            return Err(CoreError::NonFiniteLoss(name.into()));
        }
        *out.components.entry(name.into()).or_insert(0.0) += v / b;
        out.total += weight * v / b;
        if let (true, Some(sink)) = (backprop, sink.as_deref_mut()) {
            let scaled = g.scale(loss, weight / b)?;
            g.backward(scaled)?;
            for (pid, grad) in g.param_grads() {
                sink(pid, &grad);
            }
        }
        Ok(())
    };
    for item in batch {
        let s = sets
            .get(&item.task)
            .and_then(|v| v.get(item.index))
            .ok_or_else(|| CoreError::Config(format!("batch refers to missing {} sample {}", item.task, item.index)))?;
        run(item.task.name(), cfg.lambda(item.task), &|g| sample_loss(model, g, s, item.drop_prompt))?;
        if cfg.cot_supervision && s.task.is_generation() {
            if let Some(trace) = &s.trace {
                run("cot", cfg.cot_weight, &|g| cot_loss(model, g, s, trace))?;
            }
        }
    }
    Ok(out)
}

/// Radar frames available for reconstruction pre-training.
fn vae_pool(sets: &TaskSets) -> Vec<&[f32]> {
    let mut pool = Vec::new();
    for (task, samples) in sets {
        for s in samples {
            if *task != TaskKind::Inversion {
                pool.extend(s.inputs.frames());
            }
            if let Some(t) = &s.target_frames {
                pool.extend(t.frames());
            }
        }
    }
    pool
}

/// Reconstruction plus weighted KL loss of one frame with reparameterized noise.
pub fn vae_loss<T: Real>(
    model: &Model<T>,
    g: &mut Graph<T>,
    frame: &[f32],
    noise: &[f32],
    kl_weight: f64,
) -> Result<(NodeId, NodeId, NodeId)> {
    let side = model.cfg.side;
    let (mu, logvar) = model.vae_encode(g, frame)?;
    let shape = g.shape(mu).to_vec();
    let eps = g.constant(Tensor::new(shape.clone(), noise.iter().map(|&v| T::of(f64::from(v))).collect())?);
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let jitter = g.mul(std, eps)?;
    let z = g.add(mu, jitter)?;
    let y = model.vae_decode(g, z)?;
    let x = g.constant(Tensor::new(vec![side, side], frame.iter().map(|&v| T::of(f64::from(v) / 255.0)).collect())?);
    let recon = g.mean_square(y, x)?;
    // KL(q || N(0, I)) per latent element: 0.5 * (mu^2 + exp(logvar) - 1 - logvar).
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let a = g.sub(a, logvar)?;
    let kl = g.mean(a)?;
    let kl = g.scale(kl, 0.5)?;
    // The constant -0.5 is dropped from the objective; it does not change gradients.
    let weighted = g.scale(kl, kl_weight)?;
    let total = g.add(recon, weighted)?;
    Ok((total, recon, kl))
}

fn vae_pretrain(model: &mut Model<f32>, sets: &TaskSets, cfg: &TrainConfig, log: &mut TrainLog) -> Result<()> {
    let pool = vae_pool(sets);
    if pool.is_empty() || cfg.vae_pretrain_steps == 0 {
        return Ok(());
    }
    let vae_ids: Vec<bool> = model.params.iter().map(|(_, n, _)| n.starts_with("vae.")).collect();
    let mut state = OptimState::new(&model.params);
    let adam = AdamWConfig { weight_decay: 0.0, clip_norm: cfg.grad_clip, ..AdamWConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7661_6500);
    let latent = model.cfg.latent_channels * model.cfg.slots_per_frame();
    let b = cfg.vae_batch_size as f64;
    for step in 0..cfg.vae_pretrain_steps {
        let t0 = Instant::now();
        let mut grads = GradStore::new(model.params.len());
        let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.vae_batch_size {
            let frame = pool[rng.random_range(0..pool.len())];
            let noise: Vec<f32> = (0..latent).map(|_| rng.sample(StandardNormal)).collect();
            let mut g = Graph::new();
            let (l, r, k) = vae_loss(model, &mut g, frame, &noise, cfg.vae_kl_weight)?;
            let item = |n: NodeId| f64::from(g.value(n).item().unwrap_or(f32::NAN));
            total += item(l) / b;
            recon += item(r) / b;
            kl += item(k) / b;
            let scaled = g.scale(l, 1.0 / b)?;
            g.backward(scaled)?;
            for (pid, grad) in g.param_grads() {
                grads.accumulate(pid, &grad);
            }
        }
        if !total.is_finite() || total > cfg.divergence_threshold {
            return Err(CoreError::Diverged { step, loss: total });
        }
        adamw_step_masked(&mut model.params, &grads, &mut state, cfg.vae_lr, &adam, |id| vae_ids[id.0])?;
        log.steps.push(StepLog {
            stage: "vae".into(),
            step,
            total,
            components: [("recon".to_string(), recon), ("kl".to_string(), kl)].into_iter().collect(),
            lr: cfg.vae_lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(())
}

/// Fresh model for `cfg` with the standard vocabulary.
pub fn init_model(cfg: &TrainConfig) -> Result<Model<f32>> {
    Model::new(cfg.model_config(), Vocab::standard(), cfg.seed)
}

/// VAE pre-training followed by joint training. With `out`, checkpoints go to
/// `out/checkpoint` and the log to `out/train_log.jsonl`.
pub fn train(cfg: &TrainConfig, sets: &TaskSets, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = init_model(cfg)?;
    let mut log = TrainLog::default();
    let ckpt = out.map(|o| o.join("checkpoint"));
    if let Err(e) = vae_pretrain(&mut model, sets, cfg, &mut log) {
        if let (CoreError::Diverged { .. }, Some(dir)) = (&e, &ckpt) {
            save_checkpoint(dir, &model, &CheckpointMeta::default())?;
            log.write_jsonl(&dir.with_file_name("train_log.jsonl"))?;
        }
        return Err(e);
    }

    let adam = AdamWConfig { weight_decay: cfg.weight_decay, clip_norm: cfg.grad_clip, ..AdamWConfig::default() };
    let mut state = OptimState::new(&model.params);
    let schedule =
        (cfg.steps > 0).then(|| Schedule::new(cfg.lr, cfg.min_lr, cfg.warmup_steps.min(cfg.steps - 1), cfg.steps));
    let mut history = Vec::new();
    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let batch = build_batch(sets, &cfg.mix, cfg.batch_size, cfg.prompt_dropout, cfg.seed, step)?;
        let mut grads = GradStore::new(model.params.len());
        let loss = match loss_joint(&model, sets, &batch, cfg, Some(&mut grads)) {
            Ok(l) => l,
            Err(CoreError::NonFiniteLoss(_)) => LossBreakdown { total: f64::NAN, ..Default::default() },
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() || loss.total > cfg.divergence_threshold {
            if let Some(dir) = &ckpt {
                save_checkpoint(dir, &model, &CheckpointMeta { step, loss_history: history })?;
                log.write_jsonl(&dir.with_file_name("train_log.jsonl"))?;
            }
            return Err(CoreError::Diverged { step, loss: loss.total });
        }
        let lr = lr_at(schedule.as_ref().expect("steps > 0"), step + 1);
        adamw_step_masked(&mut model.params, &grads, &mut state, lr, &adam, |id| grads.get(id).is_some())?;
        history.push(loss.total);
        log.steps.push(StepLog {
            stage: "joint".into(),
            step,
            total: loss.total,
            components: loss.components,
            lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(dir) = &ckpt {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
                save_checkpoint(dir, &model, &CheckpointMeta { step: step + 1, loss_history: history.clone() })?;
            }
        }
    }
    if let Some(dir) = &ckpt {
        save_checkpoint(dir, &model, &CheckpointMeta { step: cfg.steps, loss_history: history })?;
        log.write_jsonl(&dir.with_file_name("train_log.jsonl"))?;
    }
    Ok(TrainOutcome { model, log })
}
