use serde::{Deserialize, Serialize};

use crate::error::{dims, same_len, MetricsError, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Ensemble CRPS averaged over pixels.
///
/// Uses the kernel form `E|X - y| - 0.5 E|X - X'|` with the empirical
/// member distribution; with one member it is the absolute error.
pub fn crps_ensemble(members: &[&[f32]], obs: &[f32]) -> Result<f64> {
    let m = members.len();
    if m == 0 {
        return Err(MetricsError::Empty("ensemble has no members"));
    }
    for mem in members {
        same_len(mem, obs)?;
    }
    if obs.is_empty() {
        return Err(MetricsError::Empty("observation field"));
    }
    let mut vals = vec![0.0f64; m];
    let mut total = 0.0;
    for (p, &y) in obs.iter().enumerate() {
        let y = y as f64;
        let mut skill = 0.0;
        for (v, mem) in vals.iter_mut().zip(members) {
            *v = mem[p] as f64;
            skill += (*v - y).abs();
        }
        vals.sort_by(|a, b| a.total_cmp(b));
        // sum over ordered pairs |x_i - x_j| = 2 * sum_k x_(k) (2k - m + 1)
        let spread: f64 =
            vals.iter().enumerate().map(|(k, &x)| x * (2.0 * k as f64 - m as f64 + 1.0)).sum::<f64>() * 2.0;
        total += skill / m as f64 - spread / (2.0 * (m * m) as f64);
    }
    Ok(total / obs.len() as f64)
}

pub fn mse(pred: &[f32], obs: &[f32]) -> Result<f64> {
    same_len(pred, obs)?;
    if pred.is_empty() {
        return Err(MetricsError::Empty("field"));
    }
    let s: f64 = pred.iter().zip(obs).map(|(&p, &o)| (p as f64 - o as f64).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

pub fn rmse(pred: &[f32], obs: &[f32]) -> Result<f64> {
    Ok(mse(pred, obs)?.sqrt())
}

/// Peak signal-to-noise ratio in dB for dynamic range `range`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &[f32], obs: &[f32], range: f64) -> Result<f64> {
    let e = mse(pred, obs)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (range * range / e).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, range: 255.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> =
            (0..self.window).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Mean SSIM over all window positions fully inside the image.
pub fn ssim(pred: &[f32], obs: &[f32], h: usize, w: usize, params: &SsimParams) -> Result<f64> {
    same_len(pred, obs)?;
    dims(pred, h, w)?;
    let k = params.window;
    if k == 0 || h < k || w < k {
        return Err(MetricsError::Invalid(format!("{h}x{w} image smaller than {k}x{k} window")));
    }
    let g = params.kernel();
    let (c1, c2) = (params.c1(), params.c2());
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut total = 0.0;
    for y0 in 0..oh {
        for x0 in 0..ow {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                let row = (y0 + dy) * w + x0;
                for dx in 0..k {
                    let wt = g[dy] * g[dx];
                    let a = pred[row + dx] as f64;
                    let b = obs[row + dx] as f64;
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}
