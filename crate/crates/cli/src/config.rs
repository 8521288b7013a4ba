//! Run configuration: JSON file, dotted `--set` overrides, `--seed`, and the digest.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use omniweather::trainer::{digest_json, set_dotted};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A mistake in the invocation or its inputs; exits with status 2.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

/// Sources of configuration shared by every subcommand.
pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub set: &'a [String],
    pub seed: Option<u64>,
}

/// A resolved configuration and the canonical JSON it was resolved to.
pub struct Resolved<C> {
    pub config: C,
    pub value: Value,
}

/// Layers, in order: defaults or `--config`, each `--set`, `--seed` at
/// `seed_key`, then flag overrides.
pub fn resolve<C>(src: &Sources, seed_key: &str, flags: &[(&str, Option<Value>)]) -> Result<Resolved<C>>
where
    C: Serialize + DeserializeOwned + Default,
{
    let base: C = match src.file {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| user(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| user(format!("config {}: {e}", p.display())))?
        }
        None => C::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for pair in src.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| user(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        set_dotted(&mut value, k.trim(), v.trim()).map_err(|e| user(e.to_string()))?;
    }
    if let Some(seed) = src.seed {
        set_dotted(&mut value, seed_key, &seed.to_string()).map_err(|e| user(e.to_string()))?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            set_dotted(&mut value, k, &v.to_string()).map_err(|e| user(e.to_string()))?;
        }
    }
    let config: C = serde_json::from_value(value).map_err(|e| user(format!("invalid configuration: {e}")))?;
    let value = serde_json::to_value(&config)?;
    Ok(Resolved { config, value })
}

/// Digest of the resolved configuration together with identifiers of the inputs.
pub fn run_digest(command: &str, config: &Value, inputs: Value) -> String {
    digest_json(&serde_json::json!({ "command": command, "config": config, "inputs": inputs }))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
