//! Unified weather model: modality encoders, a shared attention backbone,
//! a convolutional VAE for frames and a word-level text head.

mod checkpoint;
mod config;
mod forward;
mod nn;
mod vocab;

use numerics::{AttnSpec, Graph, NodeId, ParamStore, Real, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{EncoderVariant, ModelConfig, INPUT_FRAMES, MAX_FRAMES, TARGET_FRAMES};
pub use forward::{guide, AssembledInput, GenOutput, Segment};
pub use nn::Net;
pub use vocab::{prompt_text, Vocab, BOS, COT, EOS, NL, PAD, UNK};

use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;

/// Parameters, configuration and vocabulary of one model instance.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
}

impl Model<f32> {
    /// Initializes parameters for `cfg`; the vocabulary size is taken from `vocab`.
    pub fn new(mut cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        cfg.vocab_size = vocab.len();
        cfg.validate()?;
        let params = nn::init_params(&cfg, seed);
        Ok(Model { cfg, vocab, params })
    }
}

impl<T: Real> Model<T> {
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), vocab: self.vocab.clone(), params: self.params.cast() }
    }

    pub fn net<'a>(&'a self, g: &'a mut Graph<T>) -> Net<'a, T> {
        Net { g, p: &self.params }
    }

    fn check_side(&self, frames: &FrameSeq) -> Result<()> {
        if frames.side() != self.cfg.side {
            return Err(CoreError::Shape(format!(
                "frame side {} but the model expects {}",
                frames.side(),
                self.cfg.side
            )));
        }
        Ok(())
    }

    /// Understanding tokens: per-frame patches, projection, 2D position and
    /// frame-index embeddings. `[len * tokens_per_frame, d]`.
    pub fn encode_und(&self, g: &mut Graph<T>, frames: &FrameSeq) -> Result<NodeId> {
        self.check_side(frames)?;
        if frames.is_empty() || frames.len() > MAX_FRAMES {
            return Err(CoreError::FrameCount { expected: format!("1..={MAX_FRAMES}"), got: frames.len() });
        }
        let np = self.cfg.tokens_per_frame();
        let x = g.constant(nn::patchify(frames.data(), frames.len(), 1, self.cfg.side, self.cfg.patch));
        let mut n = self.net(g);
        let h = n.linear("und.proj", x)?;
        let pos = n.rows("und.pos", &tile(np, frames.len()))?;
        let fr = n.rows("und.frame", &repeat(frames.len(), np))?;
        let h = n.g.add(h, pos)?;
        Ok(n.g.add(h, fr)?)
    }

    /// Generation tokens from a two-channel satellite stack. `[tokens_per_frame, d]`.
    pub fn encode_gen(&self, g: &mut Graph<T>, channels: &FrameSeq) -> Result<NodeId> {
        self.check_side(channels)?;
        if channels.len() != 2 {
            return Err(CoreError::FrameCount { expected: "2 channels".into(), got: channels.len() });
        }
        let x = g.constant(nn::patchify(channels.data(), 2, 2, self.cfg.side, self.cfg.patch));
        let mut n = self.net(g);
        let h = n.linear("gen.proj", x)?;
        let pos = n.param("gen.pos")?;
        Ok(n.g.add(h, pos)?)
    }

    /// Conditioning tokens from the ten input frames. `[kappa, d]`.
    pub fn encode_radar_seq(&self, g: &mut Graph<T>, frames: &FrameSeq) -> Result<NodeId> {
        self.check_side(frames)?;
        if frames.len() != INPUT_FRAMES {
            return Err(CoreError::FrameCount { expected: INPUT_FRAMES.to_string(), got: frames.len() });
        }
        let heads = self.cfg.n_heads;
        match self.cfg.encoder_variant {
            EncoderVariant::RadarSeq => {
                let np = self.cfg.tokens_per_frame();
                let f = INPUT_FRAMES;
                let x = g.constant(nn::patchify(frames.data(), f, 1, self.cfg.side, self.cfg.patch));
                let mut n = self.net(g);
                let h = n.linear("seq.proj", x)?;
                let pos = n.rows("seq.pos", &tile(np, f))?;
                let fr = n.rows("seq.frame", &repeat(f, np))?;
                let h = n.g.add(h, pos)?;
                let mut h = n.g.add(h, fr)?;
                // Frame-major rows; the permutation regroups them patch-major.
                let to_patch: Vec<usize> = (0..np).flat_map(|p| (0..f).map(move |t| t * np + p)).collect();
                let mut to_frame = vec![0; f * np];
                for (i, &r) in to_patch.iter().enumerate() {
                    to_frame[r] = i;
                }
                for i in 0..self.cfg.seq_layers {
                    let spatial = AttnSpec { heads, groups: f, mask: numerics::AttnMask::Full };
                    h = n.block(&format!("seq.space{i}"), h, spatial)?;
                    let t = n.g.gather_rows(h, &to_patch)?;
                    let temporal = AttnSpec { heads, groups: np, mask: numerics::AttnMask::Full };
                    let t = n.block(&format!("seq.time{i}"), t, temporal)?;
                    h = n.g.gather_rows(t, &to_frame)?;
                }
                n.pool("seq.pool", h, heads)
            }
            EncoderVariant::VaeOnly => {
                let s = self.cfg.slots_per_frame();
                let mut lat = Vec::with_capacity(INPUT_FRAMES);
                for t in 0..INPUT_FRAMES {
                    let (mu, _) = self.vae_encode(g, frames.frame(t))?;
                    lat.push(g.transpose(mu)?);
                }
                let x = g.concat_rows(&lat)?;
                let mut n = self.net(g);
                let h = n.linear("vk.proj", x)?;
                let pos = n.rows("vk.pos", &tile(s, INPUT_FRAMES))?;
                let fr = n.rows("vk.frame", &repeat(INPUT_FRAMES, s))?;
                let h = n.g.add(h, pos)?;
                let h = n.g.add(h, fr)?;
                n.pool("vk.pool", h, heads)
            }
        }
    }

    /// Posterior mean and log-variance, each `[latent_channels, latent_side^2]`.
    pub fn vae_encode(&self, g: &mut Graph<T>, frame: &[f32]) -> Result<(NodeId, NodeId)> {
        let side = self.cfg.side;
        if frame.len() != side * side {
            return Err(CoreError::Shape(format!("{} values for a {side}x{side} frame", frame.len())));
        }
        let x = Tensor::new(vec![1, side, side], frame.iter().map(|&v| T::of(f64::from(v) / 255.0)).collect())?;
        let x = g.constant(x);
        let mut n = self.net(g);
        let mut h = x;
        for (i, name) in ["vae.enc1", "vae.enc2", "vae.enc3"].iter().enumerate() {
            let w = n.param(&format!("{name}.w"))?;
            let b = n.param(&format!("{name}.b"))?;
            h = n.g.conv2d(h, w, b, 2, 1)?;
            if i < 2 {
                h = n.g.gelu(h)?;
            }
        }
        let zc = self.cfg.latent_channels;
        let h = n.g.reshape(h, &[2 * zc, self.cfg.slots_per_frame()])?;
        let mu = n.g.slice_rows(h, 0, zc)?;
        let logvar = n.g.slice_rows(h, zc, zc)?;
        Ok((mu, logvar))
    }

    /// Decodes `[latent_channels, latent_side^2]` to a `[side, side]` frame in [0, 1] units (unclamped).
    pub fn vae_decode(&self, g: &mut Graph<T>, z: NodeId) -> Result<NodeId> {
        let ls = self.cfg.latent_side();
        let mut h = g.reshape(z, &[self.cfg.latent_channels, ls, ls])?;
        let mut n = self.net(g);
        for (i, name) in ["vae.dec1", "vae.dec2", "vae.dec3"].iter().enumerate() {
            let w = n.param(&format!("{name}.w"))?;
            let b = n.param(&format!("{name}.b"))?;
            h = n.g.conv_transpose2d(h, w, b, 2, 1)?;
            if i < 2 {
                h = n.g.gelu(h)?;
            }
        }
        Ok(n.g.reshape(h, &[self.cfg.side, self.cfg.side])?)
    }

    /// Encode-decode round trip through the posterior mean, clamped to [0, 255].
    pub fn vae_reconstruct(&self, frames: &FrameSeq) -> Result<FrameSeq> {
        self.check_side(frames)?;
        let mut out = Vec::with_capacity(frames.data().len());
        for f in frames.frames() {
            let mut g = Graph::inference();
            let (mu, _) = self.vae_encode(&mut g, f)?;
            let y = self.vae_decode(&mut g, mu)?;
            out.extend(g.value(y).data().iter().map(|&v| to_pixel(v)));
        }
        FrameSeq::new(frames.len(), frames.side(), out)
    }
}

/// Model output in [0, 1] units to a clamped pixel value.
pub(crate) fn to_pixel<T: Real>(v: T) -> f32 {
    (v.as_f64() * 255.0).clamp(0.0, 255.0) as f32
}

/// `0..n` repeated `times` times.
pub(crate) fn tile(n: usize, times: usize) -> Vec<usize> {
    (0..times).flat_map(|_| 0..n).collect()
}

/// Each of `0..n` repeated `each` times in a row.
pub(crate) fn repeat(n: usize, each: usize) -> Vec<usize> {
    (0..n).flat_map(|i| std::iter::repeat_n(i, each)).collect()
}
