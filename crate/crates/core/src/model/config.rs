use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Where the nowcast conditioning tokens come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Factorized space-time attention over the ten input frames.
    #[default]
    RadarSeq,
    /// Per-frame VAE latents pooled without temporal attention.
    VaeOnly,
}

impl EncoderVariant {
    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            EncoderVariant::RadarSeq => "Radar sequence encoder",
            EncoderVariant::VaeOnly => "VAE encoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub patch: usize,
    pub side: usize,
    /// Channels per latent cell; the latent grid is `(side / 8)^2`.
    pub latent_channels: usize,
    pub vae_channels: (usize, usize),
    pub kappa: usize,
    /// Attention blocks (spatial + temporal pairs) in the radar sequence encoder.
    pub seq_layers: usize,
    pub n_null: usize,
    /// Longest text (prompt plus answer) in tokens.
    pub max_text: usize,
    /// Longest assembled sequence in tokens.
    pub max_len: usize,
    pub vocab_size: usize,
    pub encoder_variant: EncoderVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            ffn_mult: 4,
            patch: 8,
            side: 64,
            latent_channels: 8,
            vae_channels: (16, 32),
            kappa: 64,
            seq_layers: 1,
            n_null: 4,
            max_text: 320,
            max_len: 2048,
            vocab_size: 0,
            encoder_variant: EncoderVariant::RadarSeq,
        }
    }
}

pub const INPUT_FRAMES: usize = 10;
pub const TARGET_FRAMES: usize = 12;
/// Frame-index embeddings cover the longest stack a task feeds in.
pub const MAX_FRAMES: usize = TARGET_FRAMES;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.patch == 0 || self.side % self.patch != 0 {
            return bad(format!("patch {} does not tile side {}", self.patch, self.side));
        }
        if self.side % 8 != 0 || self.side == 0 {
            return bad(format!("side {} is not a multiple of 8", self.side));
        }
        if self.kappa == 0 || self.latent_channels == 0 || self.n_null == 0 || self.n_layers == 0 {
            return bad("kappa, latent channels, null tokens and layers must be positive".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size is unset".into());
        }
        Ok(())
    }

    /// Visual tokens per frame.
    pub fn tokens_per_frame(&self) -> usize {
        (self.side / self.patch).pow(2)
    }

    pub fn latent_side(&self) -> usize {
        self.side / 8
    }

    /// Query slots (latent cells) per generated frame.
    pub fn slots_per_frame(&self) -> usize {
        self.latent_side().pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
