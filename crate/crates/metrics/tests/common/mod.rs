//! Brute-force reference implementations of the metrics.

use metrics::CSI_THRESHOLDS;

pub fn csi_oracle(pred: &[f32], obs: &[f32], tau: f32) -> f64 {
    let hit = pred.iter().zip(obs).filter(|(p, o)| **p >= tau && **o >= tau).count();
    let miss = pred.iter().zip(obs).filter(|(p, o)| **p < tau && **o >= tau).count();
    let fa = pred.iter().zip(obs).filter(|(p, o)| **p >= tau && **o < tau).count();
    if hit + miss + fa == 0 {
        1.0
    } else {
        hit as f64 / (hit + miss + fa) as f64
    }
}

pub fn pool_oracle(f: &[f32], h: usize, w: usize, s: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for cy in (0..h).step_by(s) {
        for cx in (0..w).step_by(s) {
            let mut m = f32::NEG_INFINITY;
            for y in cy..(cy + s).min(h) {
                for x in cx..(cx + s).min(w) {
                    m = m.max(f[y * w + x]);
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn ladder_oracle(pred: &[f32], obs: &[f32]) -> f64 {
    CSI_THRESHOLDS.iter().map(|&t| csi_oracle(pred, obs, t)).sum::<f64>() / CSI_THRESHOLDS.len() as f64
}

pub fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs_oracle(ra, rb)
            } else {
                lcs_oracle(ra, b).max(lcs_oracle(a, rb))
            }
        }
        _ => 0,
    }
}

pub fn rouge_oracle(c: &str, r: &str) -> f64 {
    let a: Vec<&str> = c.split_whitespace().collect();
    let b: Vec<&str> = r.split_whitespace().collect();
    let l = lcs_oracle(&a, &b) as f64;
    if a.is_empty() || b.is_empty() || l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / a.len() as f64, l / b.len() as f64);
    2.0 * p * rec / (p + rec)
}

/// Integral of (F(y) - 1{y >= x})^2 over y for the empirical CDF F, summed
/// exactly between consecutive breakpoints where the integrand is constant.
pub fn crps_integral_oracle(members: &[f64], x: f64) -> f64 {
    let mut pts: Vec<f64> = members.to_vec();
    pts.push(x);
    pts.sort_by(|a, b| a.total_cmp(b));
    let m = members.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let f = members.iter().filter(|&&v| v <= mid).count() as f64 / m;
        let ind = if mid >= x { 1.0 } else { 0.0 };
        total += (f - ind).powi(2) * (w[1] - w[0]);
    }
    total
}
