//! Verification metrics for radar fields and generated text.
//!
//! Fields are row-major `f32` slices on the 0–255 intensity scale; any
//! accumulation happens in `f64`.

mod categorical;
mod continuous;
mod error;
mod report;
mod text;

pub use categorical::{contingency, csi, csi_mean, max_pool, pooled_csi, ContingencyCounts, CSI_THRESHOLDS};
pub use continuous::{crps_ensemble, mse, psnr, rmse, ssim, SsimParams, PSNR_CAP_DB};
pub use error::{MetricsError, Result};
pub use report::MetricReport;
pub use text::{attribute_accuracy, radar_score, rouge_l, AttributeScore};
