use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::model::{EncoderVariant, ModelConfig};
use crate::tasks::TaskKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Per-task loss weights.
    pub lambda: BTreeMap<TaskKind, f64>,
    /// Per-task share of each batch; sums to 1.
    pub mix: BTreeMap<TaskKind, f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub prompt_dropout: f64,
    pub seed: u64,
    pub encoder_variant: EncoderVariant,
    /// Adds the reasoning trace of generation samples as an auxiliary text target.
    pub cot_supervision: bool,
    pub cot_weight: f64,
    pub vae_pretrain_steps: usize,
    pub vae_batch_size: usize,
    pub vae_lr: f64,
    pub vae_kl_weight: f64,
    /// Checkpoint cadence in steps when an output directory is given; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mix = [
            (TaskKind::Nowcast, 0.35),
            (TaskKind::Inversion, 0.25),
            (TaskKind::FrameUnderstand, 0.20),
            (TaskKind::SequenceUnderstand, 0.20),
        ];
        TrainConfig {
            model: ModelConfig::default(),
            lambda: TaskKind::ALL.into_iter().map(|t| (t, 1.0)).collect(),
            mix: mix.into_iter().collect(),
            steps: 2000,
            batch_size: 8,
            lr: 2e-4,
            min_lr: 2e-5,
            warmup_steps: 200,
            weight_decay: 0.05,
            grad_clip: Some(1.0),
            prompt_dropout: 0.1,
            seed: 0,
            encoder_variant: EncoderVariant::RadarSeq,
            cot_supervision: false,
            cot_weight: 0.5,
            vae_pretrain_steps: 500,
            vae_batch_size: 8,
            vae_lr: 1e-3,
            vae_kl_weight: 1e-4,
            checkpoint_every: 500,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        let total: f64 = self.mix.values().sum();
        if self.mix.values().any(|&r| !(r >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return bad(format!("mix ratios must be non-negative and sum to 1, got {total}"));
        }
        if let Some((t, l)) = self.lambda.iter().find(|(_, &l)| !(l >= 0.0 && l.is_finite())) {
            return bad(format!("lambda for {t} is {l}; weights must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.vae_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.lr || !(self.vae_lr > 0.0) {
            return bad(format!(
                "learning rates lr={} min_lr={} vae_lr={} are inconsistent",
                self.lr, self.min_lr, self.vae_lr
            ));
        }
        if !(0.0..=1.0).contains(&self.prompt_dropout) {
            return bad(format!("prompt dropout {} outside [0, 1]", self.prompt_dropout));
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence threshold must be positive".into());
        }
        Ok(())
    }

    pub fn lambda(&self, t: TaskKind) -> f64 {
        self.lambda.get(&t).copied().unwrap_or(0.0)
    }

    /// Model configuration with the encoder variant applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { encoder_variant: self.encoder_variant, ..self.model.clone() }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Applies a `dotted.key=value` override; the value is parsed as JSON, falling back to a string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        set_dotted(&mut v, key, value)?;
        serde_json::from_value(v).map_err(|e| CoreError::Config(format!("override {key}={value}: {e}")))
    }
}

/// Sets `a.b.c` inside a JSON object; every path segment must already exist.
pub fn set_dotted(root: &mut serde_json::Value, key: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CoreError::Config(format!("{key}: {} is not an object", parts[..i].join("."))))?;
        if !obj.contains_key(*p) {
            return Err(CoreError::Config(format!("unknown config key {key}")));
        }
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), parsed);
            return Ok(());
        }
        cur = obj.get_mut(*p).expect("checked above");
    }
    Err(CoreError::Config("empty config key".into()))
}

/// Hex SHA-256 of JSON with object keys sorted.
pub fn digest_json(v: &serde_json::Value) -> String {
    // serde_json's default map is ordered, so serialization is already canonical.
    let bytes = serde_json::to_vec(v).expect("value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"nowcast\":0.35"));
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn overrides() {
        let c = TrainConfig::default();
        let d = c.with_override("model.d_model", "64").unwrap().with_override("mix.nowcast", "0.5").unwrap();
        assert_eq!(d.model.d_model, 64);
        assert_eq!(d.mix[&TaskKind::Nowcast], 0.5);
        assert!(d.validate().is_err());
        assert!(c.with_override("no.such", "1").is_err());
        assert_ne!(c.digest(), c.with_override("steps", "3").unwrap().digest());
    }
}
