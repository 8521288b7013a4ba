use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GaussianCell, RadarEvent, Rotation, StormParams, CADENCE_MIN};
use crate::cot::annotate_from_params;
use crate::error::{CoreError, Result};

/// Spatial organization of the generated storm, one per Morphology option.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Scattered,
    Banded,
    BlobLike,
    Spiral,
    Layered,
    BowShaped,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Scattered,
        Scenario::Banded,
        Scenario::BlobLike,
        Scenario::Spiral,
        Scenario::Layered,
        Scenario::BowShaped,
    ];

    /// The Morphology option this scenario realizes.
    pub fn morphology(self) -> &'static str {
        match self {
            Scenario::Scattered => "scattered",
            Scenario::Banded => "banded",
            Scenario::BlobLike => "blob-like",
            Scenario::Spiral => "spiral",
            Scenario::Layered => "layered",
            Scenario::BowShaped => "bow-shaped",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.morphology())
    }
}

impl FromStr for Scenario {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.morphology() == s || format!("{sc:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::UnknownScenario(s.to_string()))
    }
}

/// Speed band upper edges as a fraction of the grid side per frame.
pub(crate) const SPEED_BANDS: [f64; 4] = [0.001, 0.005, 0.012, 0.025];
const VERY_FAST_CAP: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Morphology option or scenario name; `None` draws one from the seed.
    pub scenario: Option<String>,
    pub side: usize,
    pub frames: usize,
    /// Inclusive range for the total cell count; `(0, 0)` gives an empty scene.
    pub cells: (usize, usize),
    /// Override of the translation speed range in pixels per frame.
    pub speed_px: Option<(f64, f64)>,
    pub noise_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { scenario: None, side: 64, frames: 22, cells: (1, 9), speed_px: None, noise_sigma: 1.5 }
    }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    cfg: &'a GeneratorConfig,
    u: f64,
    side: f64,
    cells: Vec<GaussianCell>,
    main: Vec<usize>,
}

fn polar(r: f64, theta: f64) -> (f64, f64) {
    (r * theta.cos(), r * theta.sin())
}

impl Builder<'_> {
    fn cell(&mut self, center: (f64, f64), sigma: f64, amplitude: f64, main: bool) -> usize {
        let last = self.cfg.frames.saturating_sub(1);
        self.cells.push(GaussianCell {
            center,
            amplitude,
            sigma,
            velocity: (0.0, 0.0),
            growth_rate: 0.0,
            sigma_rate: 0.0,
            birth_frame: 0,
            death_frame: last,
        });
        let id = self.cells.len() - 1;
        if main {
            self.main.push(id);
        }
        id
    }

    /// A point at least `min_dist` from `avoid`, inside the central region.
    fn away_from(&mut self, avoid: (f64, f64), min_dist: f64) -> (f64, f64) {
        let m = 0.12 * self.side;
        let mut best = (m, m);
        let mut best_d = -1.0;
        for _ in 0..24 {
            let p = (self.rng.random_range(m..self.side - m), self.rng.random_range(m..self.side - m));
            let d = ((p.0 - avoid.0).powi(2) + (p.1 - avoid.1).powi(2)).sqrt();
            if d >= min_dist {
                return p;
            }
            if d > best_d {
                best = p;
                best_d = d;
            }
        }
        best
    }

    fn extras(&mut self, n: usize, anchor: (f64, f64), gap: f64, sigma: (f64, f64), amp: (f64, f64)) {
        for _ in 0..n {
            let p = self.away_from(anchor, gap * self.u);
            let s = self.rng.random_range(sigma.0..sigma.1) * self.u;
            let a = self.rng.random_range(amp.0..amp.1);
            self.cell(p, s, a, false);
        }
    }

    fn layout(&mut self, scenario: Scenario, n_total: usize) -> Option<Rotation> {
        let u = self.u;
        let c = (self.side / 2.0, self.side / 2.0);
        let orient = self.rng.random_range(0.0..PI);
        let extra_budget = |used: usize| n_total.saturating_sub(used);
        match scenario {
            Scenario::BlobLike => {
                let n_main = if n_total >= 2 && self.rng.random_bool(0.5) { 2 } else { 1 };
                let s = self.rng.random_range(5.0..7.0) * u;
                self.cell(c, s, 1.0, true);
                if n_main == 2 {
                    let off = polar(2.5 * u, orient);
                    self.cell((c.0 + off.0, c.1 + off.1), 0.8 * s, 0.8, true);
                }
                let k = extra_budget(n_main).min(2);
                self.extras(k, c, 18.0, (2.0, 3.0), (0.3, 0.5));
                None
            }
            Scenario::Scattered => {
                let s = self.rng.random_range(3.4..4.2) * u;
                self.cell(c, s, 1.0, true);
                let k = extra_budget(1).clamp(4, 8);
                self.extras(k, c, 16.0, (1.6, 2.3), (0.45, 0.7));
                None
            }
            Scenario::Banded => {
                let n = self.rng.random_range(5..=7);
                let s = self.rng.random_range(2.2..2.8) * u;
                for i in 0..n {
                    let off = polar((i as f64 - (n - 1) as f64 / 2.0) * 2.6 * u, orient);
                    let a = if i == n / 2 { 1.0 } else { self.rng.random_range(0.75..0.95) };
                    self.cell((c.0 + off.0, c.1 + off.1), s, a, true);
                }
                let k = extra_budget(n).min(2);
                self.extras(k, c, 21.0, (1.8, 2.4), (0.3, 0.5));
                None
            }
            Scenario::BowShaped => {
                let n = self.rng.random_range(6..=7);
                let r = 12.0 * u;
                let s = self.rng.random_range(2.4..2.9) * u;
                let span = 110f64.to_radians();
                for i in 0..n {
                    let th = orient + span * (i as f64 / (n - 1) as f64 - 0.5);
                    let off = polar(r, th);
                    // shift so the arc apex sits near the scene center
                    let apex = polar(r, orient);
                    let a = if i == n / 2 { 1.0 } else { self.rng.random_range(0.75..0.95) };
                    self.cell((c.0 + off.0 - apex.0, c.1 + off.1 - apex.1), s, a, true);
                }
                let k = extra_budget(n).min(2);
                self.extras(k, c, 21.0, (1.8, 2.4), (0.3, 0.5));
                None
            }
            Scenario::Spiral => {
                let n = 7;
                let s = self.rng.random_range(2.5..2.9) * u;
                for i in 0..n {
                    let r = (5.0 + 1.9 * i as f64) * u;
                    let off = polar(r, orient + 0.42 * i as f64);
                    let a = if i == 2 { 1.0 } else { self.rng.random_range(0.75..0.95) };
                    self.cell((c.0 + off.0, c.1 + off.1), s, a, true);
                }
                let rate = self.rng.random_range(0.02..0.045) * if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Some(Rotation { rate, center: c })
            }
            Scenario::Layered => {
                let n = self.rng.random_range(4..=6);
                for _ in 0..n {
                    let off = polar(self.rng.random_range(0.0..6.0) * u, self.rng.random_range(0.0..2.0 * PI));
                    let s = self.rng.random_range(8.0..11.0) * u;
                    let a = self.rng.random_range(0.7..1.0);
                    self.cell((c.0 + off.0, c.1 + off.1), s, a, true);
                }
                None
            }
        }
    }
}

/// Peak of the summed field of `ids` evaluated at their own centers at t = 0.
fn group_peak(cells: &[GaussianCell], ids: &[usize]) -> f64 {
    ids.iter()
        .map(|&i| {
            let p = cells[i].center;
            ids.iter()
                .map(|&j| {
                    let q = cells[j].center;
                    let d2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                    cells[j].amplitude * (-d2 / (2.0 * cells[j].sigma.powi(2))).exp()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn pick_speed(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> f64 {
    let side = cfg.side as f64;
    if let Some((lo, hi)) = cfg.speed_px {
        return if hi > lo { rng.random_range(lo..hi) } else { lo };
    }
    let class = rng.random_range(0..5);
    if class == 0 {
        return rng.random_range(0.0..0.4) * SPEED_BANDS[0] * side;
    }
    let lo = SPEED_BANDS[class - 1];
    let hi = if class == 4 { VERY_FAST_CAP } else { SPEED_BANDS[class] };
    let margin = 0.2 * (hi - lo);
    rng.random_range(lo + margin..hi - margin) * side
}

/// Redraws allowed before accepting an ambiguous scene.
const MAX_DRAWS: u64 = 64;

/// Deterministic synthetic radar event for `(seed, config)`.
///
/// Draws are repeated (with derived seeds) until the parameter-derived truth
/// is clear of class boundaries; the observation noise keeps the event seed.
pub fn synth_event(seed: u64, cfg: &GeneratorConfig) -> Result<RadarEvent> {
    let mut params = synth_params(seed, cfg)?;
    for draw in 1..MAX_DRAWS {
        if crate::cot::unambiguous(&params) {
            break;
        }
        params = synth_params(seed.wrapping_add(draw.wrapping_mul(0x9e37_79b9_7f4a_7c15)), cfg)?;
    }
    params.seed = seed;
    let frames = params.render();
    let truth = annotate_from_params(&params, 0, params.frames)?;
    Ok(RadarEvent { frames, params, truth, cadence_min: CADENCE_MIN })
}

/// Raw generator parameters for one draw, before the unambiguity check.
pub fn synth_params(seed: u64, cfg: &GeneratorConfig) -> Result<StormParams> {
    if cfg.side < 16 {
        return Err(CoreError::Config(format!("side {} below 16", cfg.side)));
    }
    if cfg.frames < 2 {
        return Err(CoreError::Config(format!("{} frames", cfg.frames)));
    }
    if cfg.cells.0 > cfg.cells.1 {
        return Err(CoreError::Config(format!("cell range {:?}", cfg.cells)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = match &cfg.scenario {
        Some(name) => name.parse()?,
        None => Scenario::ALL[rng.random_range(0..Scenario::ALL.len())],
    };
    let side = cfg.side as f64;
    let mut params = StormParams {
        scenario,
        cells: Vec::new(),
        main_group: Vec::new(),
        global_rotation: None,
        noise_sigma: cfg.noise_sigma,
        seed,
        side: cfg.side,
        frames: cfg.frames,
    };
    if cfg.cells.1 == 0 {
        return Ok(params);
    }
    let n_total = rng.random_range(cfg.cells.0..=cfg.cells.1);
    let mut b = Builder { rng, cfg, u: side / 64.0, side, cells: Vec::new(), main: Vec::new() };
    let rotation = b.layout(scenario, n_total);
    let Builder { mut rng, mut cells, main, u, .. } = b;
    let last = (cfg.frames - 1) as f64;

    // intensity trend of the main group: steady, strengthening or weakening
    let trend = rng.random_range(0..3);
    let weak_scene = rng.random_bool(0.08);
    let k = if trend == 0 || weak_scene { 0.0 } else { rng.random_range(2.5..4.5f64).min(200.0 / last) };
    let peak0 = if weak_scene {
        rng.random_range(10.0..24.0)
    } else {
        match trend {
            1 => rng.random_range(40.0..(250.0 - k * last).max(41.0)),
            2 => rng.random_range((40.0 + k * last).min(249.0)..250.0),
            _ => rng.random_range(40.0..250.0),
        }
    };
    let scale = peak0 / group_peak(&cells, &main).max(1e-9);
    let rel = if trend == 2 { -k / peak0 } else { k / peak0 };
    for &i in &main {
        cells[i].amplitude *= scale;
        cells[i].growth_rate = cells[i].amplitude * rel;
    }
    for (i, cell) in cells.iter_mut().enumerate() {
        if !main.contains(&i) {
            cell.amplitude *= if weak_scene { peak0 } else { peak0.max(40.0) };
        }
    }

    // main-group size change
    let size_mode = rng.random_range(0..5);
    let sigma_rate = match size_mode {
        0 => 0.08 * u,
        1 => -(0.04 * u).min(0.5 * cells[main[0]].sigma / last),
        _ => 0.0,
    };
    for &i in &main {
        cells[i].sigma_rate = sigma_rate;
    }

    // births and deaths among the satellite cells
    let extras: Vec<usize> = (0..cells.len()).filter(|i| !main.contains(i)).collect();
    if cfg.frames >= 10 {
        for &i in &extras {
            match rng.random_range(0..6) {
                0 => cells[i].birth_frame = rng.random_range(3..cfg.frames - 4),
                1 => cells[i].death_frame = rng.random_range(3..cfg.frames - 4),
                _ => {}
            }
        }
    }

    // shared translation, centered so the path stays on the grid
    let mut speed = pick_speed(&mut rng, cfg);
    speed = speed.min(0.7 * side / last.max(1.0));
    let sector = rng.random_range(0..8) as f64;
    let heading = (sector * 45.0 + rng.random_range(-15.0..15.0f64)).to_radians();
    // heading measured clockwise from north; screen y points south
    let v = (speed * heading.sin(), -speed * heading.cos());
    let spread = 0.5 * (side - speed * last).max(0.0) * 0.6;
    let mid = (
        side / 2.0 + rng.random_range(-1.0..=1.0) * spread.min(0.3 * side),
        side / 2.0 + rng.random_range(-1.0..=1.0) * spread.min(0.3 * side),
    );
    let shift = (mid.0 - v.0 * last / 2.0 - side / 2.0, mid.1 - v.1 * last / 2.0 - side / 2.0);
    for cell in cells.iter_mut() {
        cell.center.0 += shift.0;
        cell.center.1 += shift.1;
        cell.velocity = v;
    }

    // occasional merger: a satellite cell catches up with the main system from
    // behind, reaching contact on the last frame
    if !extras.is_empty()
        && speed >= 0.1
        && matches!(scenario, Scenario::BlobLike | Scenario::Scattered)
        && rng.random_bool(0.15)
    {
        let (j, m) = (extras[0], main[0]);
        let dir = (v.0 / speed, v.1 / speed);
        let reach0 = cells[j].sigma + cells[m].sigma;
        let reach1 = cells[j].sigma + cells[m].sigma_at(cfg.frames - 1);
        let (d0, d1) = (2.6 * reach0, reach1);
        cells[j].birth_frame = 0;
        cells[j].death_frame = cfg.frames - 1;
        cells[j].center = (cells[m].center.0 - dir.0 * d0, cells[m].center.1 - dir.1 * d0);
        let closing = (d0 - d1) / last;
        cells[j].velocity = (v.0 + dir.0 * closing, v.1 + dir.1 * closing);
    }

    params.global_rotation = rotation.map(|r| Rotation { rate: r.rate, center: mid });
    params.cells = cells;
    params.main_group = main;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_parse() {
        assert_eq!("blob-like".parse::<Scenario>().unwrap(), Scenario::BlobLike);
        assert_eq!("BowShaped".parse::<Scenario>().unwrap(), Scenario::BowShaped);
        assert!("hurricane".parse::<Scenario>().is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = GeneratorConfig::default();
        assert_eq!(synth_params(9, &cfg).unwrap(), synth_params(9, &cfg).unwrap());
        assert_ne!(synth_params(9, &cfg).unwrap(), synth_params(10, &cfg).unwrap());
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        let cfg = GeneratorConfig { scenario: Some("derecho".into()), ..Default::default() };
        assert!(matches!(synth_event(1, &cfg), Err(CoreError::UnknownScenario(_))));
    }
}
