//! Checkpoint directories: one OWTR file per parameter, JSON config and
//! metadata, and the vocabulary.

use std::fs;
use std::path::Path;

use numerics::{owtr, ParamStore};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::vocab::Vocab;
use super::Model;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

/// Writes the checkpoint into a sibling temporary directory, then renames it into place.
pub fn save_checkpoint(dir: &Path, model: &Model<f32>, meta: &CheckpointMeta) -> Result<()> {
    let name = dir.file_name().ok_or_else(|| CoreError::Config(format!("bad checkpoint path {}", dir.display())))?;
    let tmp = dir.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("params"))?;
    for (_, pname, t) in model.params.iter() {
        owtr::write(tmp.join("params").join(format!("{pname}.owtr")), t)?;
    }
    let mut names: Vec<&str> = model.params.iter().map(|(_, n, _)| n).collect();
    names.push("");
    fs::write(tmp.join("params.txt"), names.join("\n"))?;
    fs::write(tmp.join("config.json"), serde_json::to_string_pretty(&model.cfg)?)?;
    fs::write(tmp.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    model.vocab.save(&tmp.join("vocab.txt"))?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let cfg: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    cfg.validate()?;
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    if vocab.len() != cfg.vocab_size {
        return Err(CoreError::Config(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    // Initialization fixes the expected names and shapes; stored tensors replace it.
    let reference = super::nn::init_params(&cfg, 0);
    let listed = fs::read_to_string(dir.join("params.txt"))?;
    let listed: Vec<&str> = listed.lines().filter(|l| !l.is_empty()).collect();
    if listed.len() != reference.len() {
        return Err(CoreError::Config(format!(
            "checkpoint has {} parameters, expected {}",
            listed.len(),
            reference.len()
        )));
    }
    let mut params = ParamStore::new();
    for (_, name, want) in reference.iter() {
        let t = owtr::read(dir.join("params").join(format!("{name}.owtr")))?;
        if t.shape() != want.shape() {
            return Err(CoreError::Shape(format!("{name}: stored {:?}, expected {:?}", t.shape(), want.shape())));
        }
        params.insert(name, t);
    }
    Ok((Model { cfg, vocab, params }, meta))
}
