//! Parameter layout, initialization and the small layers built from graph ops.

use numerics::{AttnSpec, Graph, NodeId, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderVariant, ModelConfig, INPUT_FRAMES, MAX_FRAMES, TARGET_FRAMES};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore<f32>,
}

impl Init {
    fn normal(&mut self, name: &str, shape: &[usize], std: f64) {
        let n = Normal::new(0.0, std).expect("positive std");
        let t = Tensor::from_fn(shape, |_| n.sample(&mut self.rng) as f32);
        self.store.insert(name, t);
    }

    fn constant(&mut self, name: &str, shape: &[usize], v: f32) {
        self.store.insert(name, Tensor::full(shape, v));
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, std: f64) {
        self.normal(&format!("{name}.w"), &[fan_in, fan_out], std);
        self.constant(&format!("{name}.b"), &[fan_out], 0.0);
    }

    fn ln(&mut self, name: &str, d: usize) {
        self.constant(&format!("{name}.g"), &[d], 1.0);
        self.constant(&format!("{name}.b"), &[d], 0.0);
    }

    fn block(&mut self, name: &str, d: usize, ffn: usize, out_std: f64) {
        self.ln(&format!("{name}.ln1"), d);
        self.attn(&format!("{name}.attn"), d, out_std);
        self.ln(&format!("{name}.ln2"), d);
        self.linear(&format!("{name}.mlp1"), d, ffn, 0.02);
        self.linear(&format!("{name}.mlp2"), ffn, d, out_std);
    }

    fn attn(&mut self, name: &str, d: usize, out_std: f64) {
        for p in ["q", "k", "v"] {
            self.linear(&format!("{name}.{p}"), d, d, 0.02);
        }
        self.linear(&format!("{name}.o"), d, d, out_std);
    }

    fn pool(&mut self, name: &str, cfg: &ModelConfig) {
        let d = cfg.d_model;
        self.normal(&format!("{name}.query"), &[cfg.kappa, d], 0.02);
        self.ln(&format!("{name}.ln_q"), d);
        self.ln(&format!("{name}.ln_kv"), d);
        self.attn(&format!("{name}.attn"), d, 0.02);
        self.ln(&format!("{name}.ln2"), d);
        self.linear(&format!("{name}.mlp1"), d, d * cfg.ffn_mult, 0.02);
        self.linear(&format!("{name}.mlp2"), d * cfg.ffn_mult, d, 0.02);
        self.ln(&format!("{name}.out"), d);
    }

    fn conv(&mut self, name: &str, shape: [usize; 4], fan_in: usize, bias: usize) {
        self.normal(&format!("{name}.w"), &shape, (2.0 / fan_in as f64).sqrt());
        self.constant(&format!("{name}.b"), &[bias], 0.0);
    }
}

/// Freshly initialized parameters for `cfg`.
pub(crate) fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f32> {
    let mut it = Init { rng: ChaCha8Rng::seed_from_u64(seed), store: ParamStore::new() };
    let d = cfg.d_model;
    let ffn = d * cfg.ffn_mult;
    let np = cfg.tokens_per_frame();
    let pp = cfg.patch * cfg.patch;
    let out_std = 0.02 / (2.0 * cfg.n_layers as f64).sqrt();

    it.normal("text.embed", &[cfg.vocab_size, d], 0.02);
    it.normal("text.pos", &[cfg.max_text, d], 0.02);
    for s in ["text", "modality", "kappa", "query"] {
        it.normal(&format!("seg.{s}"), &[d], 0.02);
    }
    it.normal("null.tokens", &[cfg.n_null, d], 0.02);

    it.linear("und.proj", pp, d, 0.02);
    it.normal("und.pos", &[np, d], 0.02);
    it.normal("und.frame", &[MAX_FRAMES, d], 0.02);

    it.linear("gen.proj", 2 * pp, d, 0.02);
    it.normal("gen.pos", &[np, d], 0.02);

    it.normal("query.pos", &[cfg.slots_per_frame(), d], 0.02);
    it.normal("query.frame", &[TARGET_FRAMES, d], 0.02);
    it.linear("query.cond", d, d, 1.0 / (d as f64).sqrt());

    match cfg.encoder_variant {
        EncoderVariant::RadarSeq => {
            it.linear("seq.proj", pp, d, 0.02);
            it.normal("seq.pos", &[np, d], 0.02);
            it.normal("seq.frame", &[INPUT_FRAMES, d], 0.02);
            for i in 0..cfg.seq_layers {
                it.block(&format!("seq.space{i}"), d, ffn, 0.02);
                it.block(&format!("seq.time{i}"), d, ffn, 0.02);
            }
            it.pool("seq.pool", cfg);
        }
        EncoderVariant::VaeOnly => {
            it.linear("vk.proj", cfg.latent_channels, d, 0.02);
            it.normal("vk.pos", &[cfg.slots_per_frame(), d], 0.02);
            it.normal("vk.frame", &[INPUT_FRAMES, d], 0.02);
            it.pool("vk.pool", cfg);
        }
    }

    let (c1, c2) = cfg.vae_channels;
    let zc = cfg.latent_channels;
    it.conv("vae.enc1", [c1, 1, 4, 4], 16, c1);
    it.conv("vae.enc2", [c2, c1, 4, 4], c1 * 16, c2);
    it.conv("vae.enc3", [2 * zc, c2, 4, 4], c2 * 16, 2 * zc);
    it.conv("vae.dec1", [zc, c2, 4, 4], zc * 4, c2);
    it.conv("vae.dec2", [c2, c1, 4, 4], c2 * 4, c1);
    it.conv("vae.dec3", [c1, 1, 4, 4], c1 * 4, 1);

    for l in 0..cfg.n_layers {
        it.block(&format!("layer{l}"), d, ffn, out_std);
    }
    it.ln("out.ln", d);
    it.linear("head.text", d, cfg.vocab_size, 0.02);
    it.linear("head.latent", d, zc, 0.02);
    it.store
}

/// Graph plus the parameter store it reads from.
pub struct Net<'a, T: Real> {
    pub g: &'a mut Graph<T>,
    pub p: &'a ParamStore<T>,
}

impl<T: Real> Net<'_, T> {
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        Ok(self.g.param(self.p, name)?)
    }

    pub fn linear(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        Ok(self.g.linear(x, w, Some(b))?)
    }

    pub fn ln(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let gm = self.param(&format!("{name}.g"))?;
        let b = self.param(&format!("{name}.b"))?;
        Ok(self.g.layer_norm(x, gm, b, LN_EPS)?)
    }

    pub fn mlp(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let h = self.linear(&format!("{name}.mlp1"), x)?;
        let h = self.g.gelu(h)?;
        self.linear(&format!("{name}.mlp2"), h)
    }

    /// Multi-head attention of `xq` rows over `xkv` rows.
    pub fn attn(&mut self, name: &str, xq: NodeId, xkv: NodeId, spec: AttnSpec) -> Result<NodeId> {
        let q = self.linear(&format!("{name}.q"), xq)?;
        let k = self.linear(&format!("{name}.k"), xkv)?;
        let v = self.linear(&format!("{name}.v"), xkv)?;
        let o = self.g.attention(q, k, v, spec)?;
        self.linear(&format!("{name}.o"), o)
    }

    /// Pre-norm transformer block.
    pub fn block(&mut self, name: &str, x: NodeId, spec: AttnSpec) -> Result<NodeId> {
        let h = self.ln(&format!("{name}.ln1"), x)?;
        let a = self.attn(&format!("{name}.attn"), h, h, spec)?;
        let x = self.g.add(x, a)?;
        let h = self.ln(&format!("{name}.ln2"), x)?;
        let m = self.mlp(name, h)?;
        Ok(self.g.add(x, m)?)
    }

    /// Learned queries cross-attending over `kv`, giving `kappa` rows.
    pub fn pool(&mut self, name: &str, kv: NodeId, heads: usize) -> Result<NodeId> {
        let query = self.param(&format!("{name}.query"))?;
        let q = self.ln(&format!("{name}.ln_q"), query)?;
        let kvn = self.ln(&format!("{name}.ln_kv"), kv)?;
        let a = self.attn(&format!("{name}.attn"), q, kvn, AttnSpec::full(heads))?;
        let x = self.g.add(query, a)?;
        let h = self.ln(&format!("{name}.ln2"), x)?;
        let m = self.mlp(name, h)?;
        let x = self.g.add(x, m)?;
        self.ln(&format!("{name}.out"), x)
    }

    /// `rows` rows of a `[n, d]` table picked by index.
    pub fn rows(&mut self, name: &str, idx: &[usize]) -> Result<NodeId> {
        let t = self.param(name)?;
        Ok(self.g.gather_rows(t, idx)?)
    }

    /// Adds a `[d]` segment vector to every row.
    pub fn segment(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let s = self.param(&format!("seg.{name}"))?;
        Ok(self.g.add_bias(x, s)?)
    }
}

/// Row-major patches of a stack of frames, scaled to [0, 1]: `[len * n_p, c * patch^2]`,
/// where consecutive frames of a group of `c` become channels of one token.
pub(crate) fn patchify<T: Real>(data: &[f32], frames: usize, channels: usize, side: usize, patch: usize) -> Tensor<T> {
    let g = side / patch;
    let width = channels * patch * patch;
    let n = frames / channels;
    let mut out = Vec::with_capacity(frames * side * side);
    for f in 0..n {
        for py in 0..g {
            for px in 0..g {
                for c in 0..channels {
                    let base = (f * channels + c) * side * side;
                    for y in 0..patch {
                        let row = base + (py * patch + y) * side + px * patch;
                        out.extend(data[row..row + patch].iter().map(|&v| T::of(f64::from(v) / 255.0)));
                    }
                }
            }
        }
    }
    Tensor::new(vec![n * g * g, width], out).expect("patch layout")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_layout() {
        // 4x4 frame with value = index, patch 2: first token is the top-left 2x2.
        let data: Vec<f32> = (0..16).map(|v| v as f32 * 255.0).collect();
        let t: Tensor<f64> = patchify(&data, 1, 1, 4, 2);
        assert_eq!(t.shape(), &[4, 4]);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&t.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }
}
