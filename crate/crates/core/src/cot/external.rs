//! Attribute annotation through an external language-model adapter.

use std::thread::sleep;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::taxonomy::{Attribute, AttributeRecord};
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::stormsim::png_bytes;

pub const ATTRIBUTE_TEMPLATE_ID: &str = "attribute_annotation.v1";
const ATTRIBUTE_TEMPLATE: &str = include_str!("../../assets/prompts/attribute_annotation.v1.txt");

const ATTEMPTS: u32 = 3;
const BACKOFF_MS: u64 = 200;

pub fn template(id: &str) -> Result<&'static str> {
    match id {
        ATTRIBUTE_TEMPLATE_ID => Ok(ATTRIBUTE_TEMPLATE),
        _ => Err(CoreError::Adapter(format!("unknown prompt template {id:?}"))),
    }
}

/// Template text with the taxonomy and schema filled in.
pub fn render_prompt(id: &str) -> Result<String> {
    let enum_text: String =
        Attribute::ALL.iter().map(|a| format!("\n\"{}\": {}", a.key(), a.options().join(" / "))).collect();
    let annotations: serde_json::Map<String, Value> =
        Attribute::ALL.iter().map(|a| (a.key().to_string(), json!({"choice": "str", "rationale": "str"}))).collect();
    let schema = json!({
        "sample_id": "str",
        "analysis_input": {"annotations": annotations, "global_rationale": "str"}
    });
    let schema_text = format!("\n{}", serde_json::to_string_pretty(&schema)?);
    Ok(template(id)?.replace("{enum_text}", &enum_text).replace("{schema_text}", &schema_text))
}

/// Parses an adapter reply; anything but the exact schema is an error.
pub fn parse_annotation(body: &str) -> Result<AttributeRecord> {
    let trimmed = body.trim_start();
    if trimmed.starts_with("```") {
        return Err(CoreError::Schema("reply is wrapped in markdown fences".into()));
    }
    let value: Value =
        serde_json::from_str(trimmed).map_err(|e| CoreError::Schema(format!("reply is not JSON: {e}")))?;
    let analysis = ["analysis_input", "analysis_label"]
        .iter()
        .find_map(|k| value.get(k))
        .ok_or_else(|| CoreError::Schema("reply lacks an analysis object".into()))?;
    let annotations =
        analysis.get("annotations").ok_or_else(|| CoreError::Schema("analysis lacks \"annotations\"".into()))?;
    let global = analysis.get("global_rationale").and_then(Value::as_str).unwrap_or_default();
    AttributeRecord::from_annotations(annotations, global)
}

/// Sends the rendered frames to `endpoint` and parses the returned record.
/// Transport failures and 5xx replies are retried with exponential backoff;
/// malformed replies are not.
pub fn external_annotate(
    endpoint: &str,
    frames: &FrameSeq,
    template_id: &str,
    timeout: Duration,
) -> Result<AttributeRecord> {
    let prompt = render_prompt(template_id)?;
    let engine = base64::engine::general_purpose::STANDARD;
    let attachments =
        frames.frames().map(|f| png_bytes(f, frames.side()).map(|b| engine.encode(b))).collect::<Result<Vec<_>>>()?;
    let body = json!({
        "template_id": template_id,
        "attachments": attachments,
        "timeout_s": timeout.as_secs_f64(),
        "prompt": prompt,
    });
    let agent: ureq::Agent =
        ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();

    let mut last = String::new();
    for attempt in 0..ATTEMPTS {
        if attempt > 0 {
            sleep(Duration::from_millis(BACKOFF_MS << (attempt - 1)));
        }
        match agent.post(endpoint).send_json(&body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().map_err(|e| CoreError::Adapter(e.to_string()))?;
                if status >= 500 {
                    last = format!("adapter returned {status}");
                    continue;
                }
                if status >= 400 {
                    return Err(CoreError::Adapter(format!("adapter returned {status}: {text}")));
                }
                return parse_annotation(&text);
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(CoreError::Adapter(format!("gave up after {ATTEMPTS} attempts: {last}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_lists_every_attribute_and_schema() {
        let p = render_prompt(ATTRIBUTE_TEMPLATE_ID).unwrap();
        assert!(!p.contains("{enum_text}") && !p.contains("{schema_text}"));
        for a in Attribute::ALL {
            assert!(p.contains(&format!("\"{}\"", a.key())));
        }
        assert!(render_prompt("nope").is_err());
    }

    #[test]
    fn fenced_reply_is_rejected() {
        assert!(matches!(parse_annotation("```json\n{}\n```"), Err(CoreError::Schema(_))));
    }
}
