//! Shared fixtures: a tiny model configuration, small synthetic task sets and a
//! finite-difference check over sampled parameter coordinates.
#![allow(dead_code)]

use std::collections::BTreeMap;

use numerics::{grad_check, AttnMask, AttnSpec, Graph, NodeId, ParamId, Tensor};
use omniweather::frames::FrameSeq;
use omniweather::model::{Model, ModelConfig, Vocab};
use omniweather::stormsim::{synth_event, GeneratorConfig, RadarEvent};
use omniweather::tasks::{build_task_sets, TaskKind};
use omniweather::trainer::{loss_joint_with, vae_loss, BatchItem, TaskSets, TrainConfig};
use omniweather::Result;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 16;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        patch: 8,
        side: SIDE,
        latent_channels: 2,
        vae_channels: (4, 4),
        kappa: 3,
        seq_layers: 1,
        n_null: 2,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(seed: u64) -> Model<f32> {
    Model::new(tiny_config(), Vocab::standard(), seed).unwrap()
}

pub fn events(n: u64, side: usize) -> Vec<RadarEvent> {
    let gc = GeneratorConfig { side, ..GeneratorConfig::default() };
    (0..n).map(|s| synth_event(s, &gc).unwrap()).collect()
}

pub fn tiny_sets(n: u64) -> TaskSets {
    build_task_sets(&events(n, SIDE)).unwrap()
}

/// Finite-difference check over `per_tensor` distinct random coordinates of every
/// parameter whose name satisfies `select`. `loss` returns the scalar value and
/// hands each parameter gradient to the sink (accumulating if repeated).
pub fn check_model<F>(model: &Model<f64>, select: impl Fn(&str) -> bool, per_tensor: usize, seed: u64, loss: F) -> f64
where
    F: Fn(&Model<f64>, &mut dyn FnMut(ParamId, &[f64])) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<(ParamId, usize)> = model
        .params
        .iter()
        .filter(|(_, name, _)| select(name))
        .flat_map(|(id, _, t)| {
            let n = t.numel();
            sample(&mut rng, n, per_tensor.min(n)).into_iter().map(|i| (id, i)).collect::<Vec<_>>()
        })
        .collect();
    assert!(!coords.is_empty(), "no parameters selected");
    let point: Vec<f64> = coords.iter().map(|&(id, i)| model.params.get(id).data()[i]).collect();
    let f = |x: &[f64]| -> numerics::Result<(f64, Vec<f64>)> {
        let mut m = model.clone();
        for (&(id, i), &v) in coords.iter().zip(x) {
            m.params.get_mut(id).data_mut()[i] = v;
        }
        let mut grads: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        let value = loss(&m, &mut |id, g| {
            let acc = grads.entry(id).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        })
        .map_err(|e| numerics::NumericsError::InvalidTensor(e.to_string()))?;
        let analytic = coords.iter().map(|(id, i)| grads.get(id).map_or(0.0, |g| g[*i])).collect();
        Ok((value, analytic))
    };
    grad_check(f, &point, 1e-4).unwrap()
}

/// Adapts a single-graph loss to the `check_model` signature.
pub fn single_graph(
    build: impl Fn(&Model<f64>, &mut Graph<f64>) -> Result<NodeId>,
) -> impl Fn(&Model<f64>, &mut dyn FnMut(ParamId, &[f64])) -> Result<f64> {
    move |m, sink| {
        let mut g = Graph::new();
        let l = build(m, &mut g)?;
        g.backward(l)?;
        for (id, grad) in g.param_grads() {
            sink(id, &grad);
        }
        Ok(g.value(l).item().unwrap())
    }
}

pub fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[rows, cols], |_| r.random_range(-1.0..1.0))
}

/// One Gaussian blob drifting right by `step` pixels per frame.
pub fn moving_blob(len: usize, side: usize, step: f64) -> FrameSeq {
    let mut data = Vec::with_capacity(len * side * side);
    for t in 0..len {
        let cx = 3.0 + step * t as f64;
        for y in 0..side {
            for x in 0..side {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - 7.0).powi(2);
                data.push((200.0 * (-d2 / 8.0).exp()) as f32);
            }
        }
    }
    FrameSeq::new(len, side, data).unwrap()
}

pub fn vae_grad_error() -> f64 {
    let m = tiny_model(1).cast::<f64>();
    let frame = moving_blob(1, SIDE, 0.0);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let noise: Vec<f32> = (0..2 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
    check_model(
        &m,
        |n| n.starts_with("vae."),
        4,
        3,
        single_graph(|m, g| Ok(vae_loss(m, g, frame.frame(0), &noise, 0.1)?.0)),
    )
}

/// Backbone block under a weighted-mean readout.
pub fn attention_grad_error(mask: AttnMask) -> f64 {
    let m = tiny_model(4).cast::<f64>();
    let x = random_input(6, 16, 5);
    let w = random_input(6, 16, 6);
    check_model(
        &m,
        |n| n.starts_with("layer0."),
        6,
        7,
        single_graph(|m, g| {
            let xi = g.input(x.clone().with_grad(true));
            let y = m.net(g).block("layer0", xi, AttnSpec { heads: 2, groups: 1, mask })?;
            let wn = g.constant(w.clone());
            let p = g.mul(y, wn)?;
            Ok(g.mean(p)?)
        }),
    )
}

pub fn layer_norm_grad_error() -> f64 {
    let mut m = tiny_model(8).cast::<f64>();
    // Perturb gain and bias off their identity initialization.
    for name in ["out.ln.g", "out.ln.b"] {
        if let Ok(id) = m.params.id(name) {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            for v in m.params.get_mut(id).data_mut() {
                *v += r.random_range(-0.5..0.5);
            }
        }
    }
    let x = random_input(5, 16, 10);
    let w = random_input(5, 16, 11);
    check_model(
        &m,
        |n| n.starts_with("out.ln"),
        8,
        12,
        single_graph(|m, g| {
            let xi = g.input(x.clone().with_grad(true));
            let y = m.net(g).ln("out.ln", xi)?;
            let wn = g.constant(w.clone());
            let p = g.mul(y, wn)?;
            Ok(g.mean(p)?)
        }),
    )
}

pub fn text_head_grad_error() -> f64 {
    let m = tiny_model(13).cast::<f64>();
    let x = random_input(4, 16, 14);
    check_model(
        &m,
        |n| n.starts_with("head.text"),
        12,
        15,
        single_graph(|m, g| {
            let xi = g.input(x.clone().with_grad(true));
            let logits = m.net(g).linear("head.text", xi)?;
            Ok(g.cross_entropy(logits, &[3, 17, 42, m.vocab.eos()])?)
        }),
    )
}

/// Joint loss over a nowcast and a frame-understanding sample, every parameter tensor sampled.
pub fn joint_grad_error() -> f64 {
    let sets = tiny_sets(2);
    let cfg = TrainConfig { model: tiny_config(), ..TrainConfig::default() };
    let batch = [
        BatchItem { task: TaskKind::Nowcast, index: 0, drop_prompt: false },
        BatchItem { task: TaskKind::FrameUnderstand, index: 1, drop_prompt: false },
    ];
    let m = tiny_model(16).cast::<f64>();
    check_model(&m, |_| true, 2, 17, |m, sink| Ok(loss_joint_with(m, &sets, &batch, &cfg, Some(sink))?.total))
}
