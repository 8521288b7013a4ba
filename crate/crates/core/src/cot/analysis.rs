//! Connected-component analysis and trend statistics shared by the annotators.

/// Pixels strictly above this value belong to a convective cell.
pub const CELL_THRESHOLD: f32 = 31.0;
/// Components smaller than this are speckles.
pub const MIN_COMPONENT: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub area: usize,
    /// Centroid weighted by the excess over the cell threshold.
    pub centroid: (f64, f64),
    pub peak: f32,
    /// Ratio of principal axis lengths of the pixel footprint (>= 1).
    pub elongation: f64,
}

/// 8-connected components of pixels above the cell threshold, largest first.
pub fn components(frame: &[f32], side: usize) -> Vec<Component> {
    let mut seen = vec![false; frame.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..frame.len() {
        if seen[start] || frame[start] <= CELL_THRESHOLD {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut wx, mut wy, mut w, mut peak) = (0usize, 0.0f64, 0.0f64, 0.0f64, 0.0f32);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % side, p / side);
            let excess = (frame[p] - CELL_THRESHOLD) as f64;
            area += 1;
            wx += excess * x as f64;
            wy += excess * y as f64;
            w += excess;
            peak = peak.max(frame[p]);
            let (fx, fy) = (x as f64, y as f64);
            sx += fx;
            sy += fy;
            sxx += fx * fx;
            syy += fy * fy;
            sxy += fx * fy;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= side as isize || ny >= side as isize {
                        continue;
                    }
                    let q = ny as usize * side + nx as usize;
                    if !seen[q] && frame[q] > CELL_THRESHOLD {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if area >= MIN_COMPONENT {
            let n = area as f64;
            let (cxx, cyy, cxy) = (sxx / n - (sx / n).powi(2), syy / n - (sy / n).powi(2), sxy / n - sx * sy / (n * n));
            let tr = cxx + cyy;
            let disc = ((cxx - cyy).powi(2) + 4.0 * cxy * cxy).sqrt();
            let (l1, l2) = (0.5 * (tr + disc), (0.5 * (tr - disc)).max(1e-9));
            out.push(Component { area, centroid: (wx / w, wy / w), peak, elongation: (l1 / l2).sqrt().max(1.0) });
        }
    }
    out.sort_by(|a, b| b.area.cmp(&a.area).then(b.peak.total_cmp(&a.peak)));
    out
}

/// Track of the main system: largest component of the first non-empty frame,
/// followed by nearest centroid within `gate` pixels.
pub fn track_main(per_frame: &[Vec<Component>], gate: f64) -> Vec<Option<Component>> {
    let mut out = vec![None; per_frame.len()];
    let Some(first) = per_frame.iter().position(|c| !c.is_empty()) else {
        return out;
    };
    let mut last = per_frame[first][0].centroid;
    out[first] = Some(per_frame[first][0].clone());
    for t in first + 1..per_frame.len() {
        let best = per_frame[t]
            .iter()
            .map(|c| (dist(c.centroid, last), c))
            .filter(|(d, _)| *d <= gate)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, c)) = best {
            last = c.centroid;
            out[t] = Some(c.clone());
        }
    }
    out
}

pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Least-squares velocity of `(t, x, y)` samples; `None` below two samples.
pub fn ls_velocity(points: &[(f64, (f64, f64))]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let xm = points.iter().map(|p| p.1 .0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1 .1).sum::<f64>() / n;
    let stt: f64 = points.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let sx: f64 = points.iter().map(|p| (p.0 - tm) * (p.1 .0 - xm)).sum();
    let sy: f64 = points.iter().map(|p| (p.0 - tm) * (p.1 .1 - ym)).sum();
    Some((sx / stt, sy / stt))
}

/// Means of the first and last thirds of a series (at least one element each).
pub fn thirds(series: &[f64]) -> Option<(f64, f64)> {
    if series.is_empty() {
        return None;
    }
    let k = (series.len() / 3).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&series[..k]), mean(&series[series.len() - k..])))
}

/// Means of the first, middle and last thirds.
pub fn three_means(series: &[f64]) -> Option<(f64, f64, f64)> {
    if series.len() < 3 {
        return None;
    }
    let k = series.len() / 3;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&series[..k]), mean(&series[k..series.len() - k]), mean(&series[series.len() - k..])))
}

/// 3x3 sector label of a point; see `POSITION`.
pub fn position_label(p: (f64, f64), side: usize) -> &'static str {
    let third = side as f64 / 3.0;
    let col = if p.0 < third {
        0
    } else if p.0 >= 2.0 * third {
        2
    } else {
        1
    };
    let row = if p.1 < third {
        0
    } else if p.1 >= 2.0 * third {
        2
    } else {
        1
    };
    match (row, col) {
        (0, 0) => "NW",
        (0, 1) => "N",
        (0, 2) => "NE",
        (1, 0) => "W",
        (1, 1) => "centered",
        (1, 2) => "E",
        (2, 0) => "SW",
        (2, 1) => "S",
        _ => "SE",
    }
}

/// Distance from `p` to the nearest 3x3 sector boundary line.
pub fn position_margin(p: (f64, f64), side: usize) -> f64 {
    let third = side as f64 / 3.0;
    [p.0 - third, p.0 - 2.0 * third, p.1 - third, p.1 - 2.0 * third]
        .iter()
        .map(|d| d.abs())
        .fold(f64::INFINITY, f64::min)
}
