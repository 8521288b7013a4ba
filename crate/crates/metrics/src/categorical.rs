use serde::{Deserialize, Serialize};

use crate::error::{dims, same_len, MetricsError, Result};

/// Intensity thresholds for CSI, lower bin edges of the VIL colour scale.
pub const CSI_THRESHOLDS: [f32; 6] = [16.0, 74.0, 133.0, 160.0, 181.0, 219.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP + FN)`, or 1 when neither field has an event.
    pub fn csi(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

/// Binarize both fields at `>= tau` and count outcomes.
pub fn contingency(pred: &[f32], obs: &[f32], tau: f32) -> Result<ContingencyCounts> {
    same_len(pred, obs)?;
    let mut c = ContingencyCounts::default();
    for (&p, &o) in pred.iter().zip(obs) {
        match (p >= tau, o >= tau) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn csi(pred: &[f32], obs: &[f32], tau: f32) -> Result<f64> {
    if !(0.0..=255.0).contains(&tau) {
        return Err(MetricsError::Invalid(format!("threshold {tau} outside [0,255]")));
    }
    Ok(contingency(pred, obs, tau)?.csi())
}

/// Mean CSI over [`CSI_THRESHOLDS`].
pub fn csi_mean(pred: &[f32], obs: &[f32]) -> Result<f64> {
    let mut total = 0.0;
    for &t in &CSI_THRESHOLDS {
        total += csi(pred, obs, t)?;
    }
    Ok(total / CSI_THRESHOLDS.len() as f64)
}

/// Max-pool an `h x w` field with kernel = stride = `s`; ragged edges pool
/// over the partial window.
pub fn max_pool(field: &[f32], h: usize, w: usize, s: usize) -> Result<(Vec<f32>, usize, usize)> {
    dims(field, h, w)?;
    if s == 0 {
        return Err(MetricsError::Invalid("pool size 0".into()));
    }
    let (ph, pw) = (h.div_ceil(s), w.div_ceil(s));
    let mut out = vec![f32::NEG_INFINITY; ph * pw];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y / s) * pw + x / s];
            *o = o.max(field[y * w + x]);
        }
    }
    Ok((out, ph, pw))
}

/// Ladder-mean CSI after max-pooling both fields with window `s`.
pub fn pooled_csi(pred: &[f32], obs: &[f32], h: usize, w: usize, s: usize) -> Result<f64> {
    same_len(pred, obs)?;
    let (pp, _, _) = max_pool(pred, h, w, s)?;
    let (po, _, _) = max_pool(obs, h, w, s)?;
    csi_mean(&pp, &po)
}
