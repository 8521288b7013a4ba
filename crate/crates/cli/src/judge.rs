//! Optional adapter to an external scoring service.
//!
//! Each prediction/reference pair is POSTed as JSON
//! `{task, sample_id, prediction, reference}`; the service answers `{"score": f64}`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use metrics::MetricReport;
use omniweather::cot::dataset::read_jsonl;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::TextPrediction;
use crate::config::{read_json, resolve, run_digest, user, write_json, Sources};
use crate::output::{write_run_files, Staging};
use crate::Global;

pub const ENDPOINT_ENV: &str = "OMNIW_JUDGE_ENDPOINT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub seed: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { endpoint: None, timeout_secs: 10.0, seed: 0 }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    task: &'a str,
    sample_id: &'a str,
    prediction: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    score: f64,
}

#[derive(Serialize)]
struct Scored<'a> {
    sample_id: &'a str,
    task: &'a str,
    score: f64,
}

pub fn judge(g: &Global, eval_dir: &Path, endpoint: Option<String>) -> Result<()> {
    let endpoint = endpoint.or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()));
    let src = Sources { file: g.config.as_deref(), set: &g.set, seed: g.seed };
    let r = resolve::<JudgeConfig>(&src, "seed", &[("endpoint", endpoint.map(Into::into))])?;
    let Some(url) = r.config.endpoint.clone() else {
        return Err(user(format!("judge disabled: pass --judge-endpoint or set {ENDPOINT_ENV}")));
    };
    if !(r.config.timeout_secs > 0.0) {
        return Err(user("timeout_secs must be positive"));
    }
    let mut report: MetricReport = read_json(&eval_dir.join("report.json")).map_err(|e| user(format!("{e:#}")))?;
    let preds: Vec<TextPrediction> =
        read_jsonl(&eval_dir.join("predictions.jsonl")).map_err(|e| user(format!("{e:#}")))?;
    // The endpoint is not part of the digest; scores depend only on what the service returns.
    let mut inputs = r.value.clone();
    inputs["endpoint"] = serde_json::Value::Null;
    let digest = run_digest("judge", &inputs, json!({ "report": report.config_digest }));

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(r.config.timeout_secs)))
        .build()
        .into();
    let mut scored = Vec::new();
    let mut failure = None;
    for p in &preds {
        let req = Request {
            task: p.task.name(),
            sample_id: &p.sample_id,
            prediction: &p.prediction,
            reference: &p.reference,
        };
        let reply = agent
            .post(&url)
            .send_json(&req)
            .and_then(|mut resp| resp.body_mut().read_json::<Reply>())
            .map_err(|e| anyhow!("judge request for {} failed: {e}", p.sample_id));
        match reply {
            Ok(r) if r.score.is_finite() => {
                scored.push(Scored { sample_id: &p.sample_id, task: p.task.name(), score: r.score })
            }
            Ok(r) => {
                failure = Some(anyhow!("judge returned non-finite score {} for {}", r.score, p.sample_id));
                break;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }

    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for s in &scored {
        let e = sums.entry(s.task).or_default();
        e.0 += s.score;
        e.1 += 1;
    }
    for (task, (sum, n)) in &sums {
        report.set(task, "judge_score", sum / *n as f64);
        report.set(task, "judge_n", *n as f64);
    }
    report.config_digest = digest.clone();

    let out = g.out.clone().unwrap_or_else(|| eval_dir.join("judge"));
    let stage = Staging::new(&out)?;
    write_json(&stage.path().join("report.json"), &report)?;
    omniweather::cot::dataset::write_jsonl(&stage.path().join("judge_scores.jsonl"), &scored)?;
    let status = json!({
        "complete": failure.is_none(),
        "scored": scored.len(),
        "total": preds.len(),
        "error": failure.as_ref().map(|e| format!("{e:#}")),
    });
    write_json(&stage.path().join("status.json"), &status)?;
    write_run_files(stage.path(), &r.value, &digest)?;
    let dest = stage.commit()?;
    println!("judged {} of {} predictions -> {}", scored.len(), preds.len(), dest.join("report.json").display());
    match failure {
        Some(e) => Err(e).context("partial judge report written"),
        None => Ok(()),
    }
}
