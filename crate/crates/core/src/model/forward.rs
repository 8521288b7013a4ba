//! Input assembly, the shared backbone, guided generation and text decoding.

use std::ops::Range;

use numerics::{AttnMask, AttnSpec, Graph, NodeId, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{INPUT_FRAMES, TARGET_FRAMES};
use super::{repeat, tile, to_pixel, Model};
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::tasks::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Text,
    Modality,
    Kappa,
    Query,
    /// Learned tokens standing in for prompt and conditioning.
    Null,
    /// Decoder-side text (BOS plus answer tokens).
    Answer,
}

/// An embedded token sequence with its segment boundaries.
#[derive(Clone, Debug)]
pub struct AssembledInput {
    pub task: TaskKind,
    pub x: NodeId,
    pub segments: Vec<(Segment, Range<usize>)>,
    pub len: usize,
}

impl AssembledInput {
    pub fn range(&self, s: Segment) -> Option<Range<usize>> {
        self.segments.iter().find(|(k, _)| *k == s).map(|(_, r)| r.clone())
    }

    /// Concatenates the parts in order, recording their row ranges.
    fn build<T: Real>(g: &mut Graph<T>, task: TaskKind, parts: &[(Segment, NodeId)]) -> Result<Self> {
        let mut segments = Vec::with_capacity(parts.len());
        let mut len = 0;
        for &(seg, rows) in parts {
            let n = g.shape(rows)[0];
            segments.push((seg, len..len + n));
            len += n;
        }
        let nodes: Vec<NodeId> = parts.iter().map(|p| p.1).collect();
        let x = if nodes.len() == 1 { nodes[0] } else { g.concat_rows(&nodes)? };
        Ok(AssembledInput { task, x, segments, len })
    }
}

/// Frames produced by a generation pass together with the guided latents.
#[derive(Clone, Debug)]
pub struct GenOutput<T: Real> {
    pub frames: FrameSeq,
    /// `[slots, latent_channels]` after guidance.
    pub latents: Tensor<T>,
}

/// Classifier-free guidance in latent space: `u + s * (c - u)`.
pub fn guide<T: Real>(cond: &[T], uncond: &[T], scale: f64) -> Vec<T> {
    let s = T::of(scale);
    cond.iter().zip(uncond).map(|(&c, &u)| u + s * (c - u)).collect()
}

/// Cached keys and values of one backbone layer during decoding.
#[derive(Clone, Debug, Default)]
struct LayerKv<T> {
    k: Vec<T>,
    v: Vec<T>,
    rows: usize,
}

/// Number of frames a generation task produces.
pub fn target_frames(task: TaskKind) -> usize {
    if task == TaskKind::Nowcast {
        TARGET_FRAMES
    } else {
        1
    }
}

impl<T: Real> Model<T> {
    /// Token, position and segment embeddings for `ids` placed at text positions `start..`.
    pub fn embed_text(&self, g: &mut Graph<T>, ids: &[usize], start: usize) -> Result<NodeId> {
        if start + ids.len() > self.cfg.max_text {
            return Err(CoreError::Shape(format!(
                "text of {} tokens exceeds the {}-token limit",
                start + ids.len(),
                self.cfg.max_text
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(CoreError::Shape(format!("token id {bad} outside the vocabulary")));
        }
        let pos: Vec<usize> = (start..start + ids.len()).collect();
        let mut n = self.net(g);
        let e = n.rows("text.embed", ids)?;
        let p = n.rows("text.pos", &pos)?;
        let x = n.g.add(e, p)?;
        n.segment("text", x)
    }

    /// Learned query slots for `frames` generated frames.
    pub fn query_slots(&self, g: &mut Graph<T>, frames: usize) -> Result<NodeId> {
        let s = self.cfg.slots_per_frame();
        let mut n = self.net(g);
        let p = n.rows("query.pos", &tile(s, frames))?;
        let f = n.rows("query.frame", &repeat(frames, s))?;
        let x = n.g.add(p, f)?;
        n.segment("query", x)
    }

    /// Adds to every query slot a projection of the modality token covering the
    /// same image cell, for each generated frame.
    fn align_queries(&self, g: &mut Graph<T>, q: NodeId, modality: NodeId, frames: usize) -> Result<NodeId> {
        let tg = self.cfg.side / self.cfg.patch;
        let rows = g.value(modality).shape()[0];
        if rows != tg * tg {
            return Err(CoreError::Shape(format!("{rows} modality tokens for a {tg}x{tg} patch grid")));
        }
        let ls = self.cfg.latent_side();
        let cell: Vec<usize> = (0..ls * ls).map(|c| (c / ls * tg / ls) * tg + (c % ls * tg / ls)).collect();
        let idx: Vec<usize> = (0..frames).flat_map(|_| cell.iter().copied()).collect();
        let picked = g.gather_rows(modality, &idx)?;
        let c = self.net(g).linear("query.cond", picked)?;
        Ok(g.add(q, c)?)
    }

    /// Modality tokens and (for nowcasting) conditioning tokens for a task's inputs.
    pub fn encode_inputs(
        &self,
        g: &mut Graph<T>,
        task: TaskKind,
        inputs: &FrameSeq,
    ) -> Result<(NodeId, Option<NodeId>)> {
        match task {
            TaskKind::Nowcast => {
                if inputs.len() != INPUT_FRAMES {
                    return Err(CoreError::FrameCount { expected: INPUT_FRAMES.to_string(), got: inputs.len() });
                }
                let last = inputs.window(INPUT_FRAMES - 1, 1)?;
                let m = self.encode_und(g, &last)?;
                let k = self.encode_radar_seq(g, inputs)?;
                Ok((m, Some(k)))
            }
            TaskKind::Inversion => Ok((self.encode_gen(g, inputs)?, None)),
            TaskKind::FrameUnderstand | TaskKind::SequenceUnderstand => Ok((self.encode_und(g, inputs)?, None)),
        }
    }

    /// `[text; modality; kappa; query slots]`. Understanding tasks get no query
    /// slots; their answer is appended by the decoder.
    pub fn assemble_input(
        &self,
        g: &mut Graph<T>,
        prompt: &[usize],
        modality: Option<NodeId>,
        kappa: Option<NodeId>,
        task: TaskKind,
    ) -> Result<AssembledInput> {
        if task == TaskKind::Nowcast && kappa.is_none() {
            return Err(CoreError::Config("nowcast input needs conditioning tokens".into()));
        }
        let mut parts = self.conditioning(g, prompt, modality, kappa)?;
        if task.is_generation() {
            let frames = target_frames(task);
            let mut q = self.query_slots(g, frames)?;
            if let Some(m) = modality {
                q = self.align_queries(g, q, m, frames)?;
            }
            parts.push((Segment::Query, q));
        }
        let a = AssembledInput::build(g, task, &parts)?;
        self.check_len(a.len)?;
        Ok(a)
    }

    fn conditioning(
        &self,
        g: &mut Graph<T>,
        prompt: &[usize],
        modality: Option<NodeId>,
        kappa: Option<NodeId>,
    ) -> Result<Vec<(Segment, NodeId)>> {
        let mut parts = Vec::new();
        if !prompt.is_empty() {
            parts.push((Segment::Text, self.embed_text(g, prompt, 0)?));
        }
        if let Some(m) = modality {
            parts.push((Segment::Modality, self.net(g).segment("modality", m)?));
        }
        if let Some(k) = kappa {
            parts.push((Segment::Kappa, self.net(g).segment("kappa", k)?));
        }
        Ok(parts)
    }

    /// Unconditional generation input: null tokens then query slots.
    pub fn assemble_uncond(&self, g: &mut Graph<T>, task: TaskKind) -> Result<AssembledInput> {
        if !task.is_generation() {
            return Err(CoreError::Config(format!("{task} is not a generation task")));
        }
        let null = self.net(g).param("null.tokens")?;
        let q = self.query_slots(g, target_frames(task))?;
        AssembledInput::build(g, task, &[(Segment::Null, null), (Segment::Query, q)])
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.cfg.max_len {
            return Err(CoreError::Shape(format!("sequence of {len} tokens exceeds max_len {}", self.cfg.max_len)));
        }
        Ok(())
    }

    /// Shared layers plus final norm. With `cache`, keys and values of earlier
    /// rows are prepended and the new rows' keys and values appended.
    fn backbone_inner(
        &self,
        g: &mut Graph<T>,
        mut x: NodeId,
        mask: AttnMask,
        mut cache: Option<&mut Vec<LayerKv<T>>>,
    ) -> Result<NodeId> {
        let d = self.cfg.d_model;
        let spec = AttnSpec { heads: self.cfg.n_heads, groups: 1, mask };
        for l in 0..self.cfg.n_layers {
            let name = format!("layer{l}");
            let mut n = self.net(g);
            let h = n.ln(&format!("{name}.ln1"), x)?;
            let q = n.linear(&format!("{name}.attn.q"), h)?;
            let mut k = n.linear(&format!("{name}.attn.k"), h)?;
            let mut v = n.linear(&format!("{name}.attn.v"), h)?;
            if let Some(c) = cache.as_deref_mut() {
                let kv = &mut c[l];
                if kv.rows > 0 {
                    let kc = n.g.constant(Tensor::new(vec![kv.rows, d], kv.k.clone())?);
                    let vc = n.g.constant(Tensor::new(vec![kv.rows, d], kv.v.clone())?);
                    k = n.g.concat_rows(&[kc, k])?;
                    v = n.g.concat_rows(&[vc, v])?;
                }
                kv.k = n.g.value(k).data().to_vec();
                kv.v = n.g.value(v).data().to_vec();
                kv.rows = n.g.shape(k)[0];
            }
            let o = n.g.attention(q, k, v, spec)?;
            let a = n.linear(&format!("{name}.attn.o"), o)?;
            x = n.g.add(x, a)?;
            let h = n.ln(&format!("{name}.ln2"), x)?;
            let m = n.mlp(&name, h)?;
            x = n.g.add(x, m)?;
        }
        self.net(g).ln("out.ln", x)
    }

    /// Runs the shared backbone over an assembled sequence.
    pub fn backbone(&self, g: &mut Graph<T>, x: NodeId, mask: AttnMask) -> Result<NodeId> {
        self.backbone_inner(g, x, mask, None)
    }

    /// Query-slot outputs projected to latents, `[slots, latent_channels]`.
    pub fn latents(&self, g: &mut Graph<T>, a: &AssembledInput) -> Result<NodeId> {
        let q = a.range(Segment::Query).ok_or_else(|| CoreError::Config("input has no query slots".into()))?;
        let h = self.backbone(g, a.x, AttnMask::Full)?;
        let h = g.slice_rows(h, q.start, q.len())?;
        self.net(g).linear("head.latent", h)
    }

    /// Latents for a generation input; `None` prompt means the unconditional branch.
    pub fn gen_latents(
        &self,
        g: &mut Graph<T>,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: Option<&[usize]>,
    ) -> Result<NodeId> {
        let a = match prompt {
            Some(p) => {
                let (m, k) = self.encode_inputs(g, task, inputs)?;
                self.assemble_input(g, p, Some(m), k, task)?
            }
            None => self.assemble_uncond(g, task)?,
        };
        self.latents(g, &a)
    }

    /// Decodes `[frames * slots, latent_channels]` latents to `[frames * side, side]` in [0, 1] units.
    pub fn decode_latents(&self, g: &mut Graph<T>, latents: NodeId, frames: usize) -> Result<NodeId> {
        let s = self.cfg.slots_per_frame();
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let z = g.slice_rows(latents, f * s, s)?;
            let z = g.transpose(z)?;
            out.push(self.vae_decode(g, z)?);
        }
        Ok(g.concat_rows(&out)?)
    }

    /// Pixel-space mean squared error (in [0, 1] units) of a generation input against its targets.
    pub fn gen_loss(
        &self,
        g: &mut Graph<T>,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: Option<&[usize]>,
        targets: &FrameSeq,
    ) -> Result<NodeId> {
        let frames = target_frames(task);
        if targets.len() != frames || targets.side() != self.cfg.side {
            return Err(CoreError::FrameCount { expected: format!("{frames} target frames"), got: targets.len() });
        }
        let z = self.gen_latents(g, task, inputs, prompt)?;
        let y = self.decode_latents(g, z, frames)?;
        let side = self.cfg.side;
        let t = Tensor::new(
            vec![frames * side, side],
            targets.data().iter().map(|&v| T::of(f64::from(v) / 255.0)).collect(),
        )?;
        let t = g.constant(t);
        Ok(g.mean_square(y, t)?)
    }

    /// Sequence `[prompt; modality; kappa; BOS answer]` and the row where decoding starts.
    fn text_sequence(
        &self,
        g: &mut Graph<T>,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: &[usize],
        answer: &[usize],
    ) -> Result<(NodeId, usize)> {
        let (m, k) = self.encode_inputs(g, task, inputs)?;
        let mut parts = self.conditioning(g, prompt, Some(m), k)?;
        let mut ids = vec![self.vocab.bos()];
        ids.extend_from_slice(answer);
        parts.push((Segment::Answer, self.embed_text(g, &ids, prompt.len())?));
        let a = AssembledInput::build(g, task, &parts)?;
        self.check_len(a.len)?;
        let prefix = a.range(Segment::Answer).map_or(a.len, |r| r.start);
        Ok((a.x, prefix))
    }

    /// Token-mean cross-entropy of `answer` (plus EOS) under teacher forcing.
    pub fn text_loss(
        &self,
        g: &mut Graph<T>,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: &[usize],
        answer: &[usize],
    ) -> Result<NodeId> {
        let (x, prefix) = self.text_sequence(g, task, inputs, prompt, answer)?;
        let h = self.backbone(g, x, AttnMask::Causal { prefix, q_offset: 0 })?;
        let h = g.slice_rows(h, prefix, answer.len() + 1)?;
        let logits = self.net(g).linear("head.text", h)?;
        let mut targets = answer.to_vec();
        targets.push(self.vocab.eos());
        Ok(g.cross_entropy(logits, &targets)?)
    }

    /// Generates frames with classifier-free guidance at `cfg_scale`. Scales 1
    /// and 0 run only the conditional or unconditional pass respectively.
    pub fn forward_generate(
        &self,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: &str,
        cfg_scale: f64,
    ) -> Result<GenOutput<T>> {
        if !task.is_generation() {
            return Err(CoreError::Config(format!("{task} is not a generation task")));
        }
        if !(cfg_scale >= 0.0 && cfg_scale.is_finite()) {
            return Err(CoreError::Config(format!("cfg scale {cfg_scale} must be finite and non-negative")));
        }
        let ids = self.vocab.tokenize(prompt);
        let run = |prompt: Option<&[usize]>| -> Result<Tensor<T>> {
            let mut g = Graph::inference();
            let z = self.gen_latents(&mut g, task, inputs, prompt)?;
            Ok(g.value(z).clone())
        };
        let latents = if cfg_scale == 1.0 {
            run(Some(&ids))?
        } else if cfg_scale == 0.0 {
            run(None)?
        } else {
            let c = run(Some(&ids))?;
            let u = run(None)?;
            Tensor::new(c.shape().to_vec(), guide(c.data(), u.data(), cfg_scale))?
        };
        let frames = self.frames_from_latents(&latents, target_frames(task))?;
        Ok(GenOutput { frames, latents })
    }

    /// Decodes latents to clamped pixel frames.
    pub fn frames_from_latents(&self, latents: &Tensor<T>, frames: usize) -> Result<FrameSeq> {
        let mut g = Graph::inference();
        let z = g.constant(latents.clone());
        let y = self.decode_latents(&mut g, z, frames)?;
        let data = g.value(y).data().iter().map(|&v| to_pixel(v)).collect();
        FrameSeq::new(frames, self.cfg.side, data)
    }

    /// Autoregressive answer for an understanding input. Temperature 0 decodes
    /// greedily; above 0 samples from the tempered softmax with `seed`.
    pub fn forward_understand(
        &self,
        task: TaskKind,
        inputs: &FrameSeq,
        prompt: &str,
        max_len: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<String> {
        if max_len == 0 {
            return Err(CoreError::Config("max_len must be positive".into()));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(CoreError::Config(format!("temperature {temperature} must be finite and non-negative")));
        }
        let ids = self.vocab.tokenize(prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cache = vec![LayerKv::default(); self.cfg.n_layers];
        let mut out = Vec::new();

        let mut g = Graph::inference();
        let (x, prefix) = self.text_sequence(&mut g, task, inputs, &ids, &[])?;
        let h = self.backbone_inner(&mut g, x, AttnMask::Causal { prefix, q_offset: 0 }, Some(&mut cache))?;
        let last = g.shape(h)[0] - 1;
        let mut logits = self.logits_at(&mut g, h, last)?;
        loop {
            let next = pick(&logits, temperature, &mut rng);
            if next == self.vocab.eos() {
                break;
            }
            out.push(next);
            let pos = ids.len() + out.len();
            if out.len() >= max_len || pos >= self.cfg.max_text {
                break;
            }
            let mut g = Graph::inference();
            let x = self.embed_text(&mut g, &[next], pos)?;
            let h = self.backbone_inner(&mut g, x, AttnMask::Full, Some(&mut cache))?;
            logits = self.logits_at(&mut g, h, 0)?;
        }
        Ok(self.vocab.detokenize(&out))
    }

    fn logits_at(&self, g: &mut Graph<T>, h: NodeId, row: usize) -> Result<Vec<f64>> {
        let r = g.slice_rows(h, row, 1)?;
        let l = self.net(g).linear("head.text", r)?;
        Ok(g.value(l).data().iter().map(|v| v.as_f64()).collect())
    }
}

fn pick(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let argmax = || {
        logits.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
    };
    if temperature == 0.0 {
        return argmax();
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&v| ((v - m) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        r -= x;
        if r <= 0.0 {
            return i;
        }
    }
    argmax()
}
