use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

/// Per-task metric values plus baselines, serialized as
/// `{<task>: {<metric>: value}, "baselines": {...}, "n_samples", "config_digest"}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub tasks: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub baselines: BTreeMap<String, BTreeMap<String, f64>>,
    pub n_samples: usize,
    #[serde(default)]
    pub config_digest: String,
}

impl MetricReport {
    pub fn set(&mut self, task: &str, metric: &str, value: f64) {
        self.tasks.entry(task.to_string()).or_default().insert(metric.to_string(), value);
    }

    pub fn set_baseline(&mut self, name: &str, metric: &str, value: f64) {
        self.baselines.entry(name.to_string()).or_default().insert(metric.to_string(), value);
    }

    pub fn get(&self, task: &str, metric: &str) -> Option<f64> {
        self.tasks.get(task)?.get(metric).copied()
    }

    /// Checks finiteness and the documented ranges of bounded metrics.
    pub fn validate(&self) -> Result<()> {
        for (task, metrics) in self.tasks.iter().chain(&self.baselines) {
            for (name, &v) in metrics {
                let bad = !v.is_finite()
                    || (name.starts_with("csi") && !(0.0..=1.0).contains(&v))
                    || (name.starts_with("rouge_l") && !(0.0..=1.0).contains(&v))
                    || (name.starts_with("ssim") && !(-1.0..=1.0).contains(&v));
                if bad {
                    return Err(MetricsError::Invalid(format!("{task}.{name} = {v}")));
                }
            }
        }
        Ok(())
    }
}
