//! Procedural radar event generator: sums of advected Gaussian cells.

mod colormap;
mod generator;
mod satellite;
mod segment;

pub(crate) use colormap::png_bytes;
pub use colormap::{colormap, render_png, write_png, BACKGROUND};
pub(crate) use generator::SPEED_BANDS;
pub use generator::{synth_event, synth_params, GeneratorConfig, Scenario};
pub use satellite::{derive_satellite, gaussian_blur};
pub use segment::{
    filter_low_signal, split_pairs, window_offsets, INPUT_FRAMES, LONG_EVENT, SHORT_EVENT, TARGET_FRAMES,
};

use serde::{Deserialize, Serialize};

use crate::cot::AttributeRecord;
use crate::frames::FrameSeq;

/// Minutes between frames.
pub const CADENCE_MIN: u32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCell {
    /// `(x, y)` in pixels at frame 0; y grows downward (south).
    pub center: (f64, f64),
    pub amplitude: f64,
    pub sigma: f64,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Amplitude units per frame since birth.
    pub growth_rate: f64,
    pub sigma_rate: f64,
    pub birth_frame: usize,
    pub death_frame: usize,
}

/// Rigid rotation of every cell about `center` at `rate` radians per frame
/// (positive = clockwise on screen).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub rate: f64,
    pub center: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StormParams {
    pub scenario: Scenario,
    pub cells: Vec<GaussianCell>,
    /// Indices of the cells forming the main convective system.
    #[serde(default)]
    pub main_group: Vec<usize>,
    pub global_rotation: Option<Rotation>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub side: usize,
    pub frames: usize,
}

impl GaussianCell {
    pub fn alive(&self, t: usize) -> bool {
        self.birth_frame <= t && t <= self.death_frame
    }

    pub fn amplitude_at(&self, t: usize) -> f64 {
        let age = t.saturating_sub(self.birth_frame) as f64;
        (self.amplitude + self.growth_rate * age).clamp(0.0, 255.0)
    }

    pub fn sigma_at(&self, t: usize) -> f64 {
        (self.sigma + self.sigma_rate * t as f64).max(0.5)
    }
}

impl StormParams {
    /// Cell center at frame `t` after advection and rotation.
    pub fn position(&self, cell: &GaussianCell, t: f64) -> (f64, f64) {
        let x = cell.center.0 + cell.velocity.0 * t;
        let y = cell.center.1 + cell.velocity.1 * t;
        match &self.global_rotation {
            Some(r) if r.rate != 0.0 => {
                let (s, c) = (r.rate * t).sin_cos();
                let (dx, dy) = (x - r.center.0, y - r.center.1);
                (r.center.0 + c * dx - s * dy, r.center.1 + s * dx + c * dy)
            }
            _ => (x, y),
        }
    }

    /// Noise-free field at frame `t`, clamped to [0, 255].
    pub fn render_clean(&self, t: usize) -> Vec<f32> {
        self.render_cells(t, |_| true)
    }

    pub(crate) fn render_cells(&self, t: usize, keep: impl Fn(usize) -> bool) -> Vec<f32> {
        let side = self.side;
        let mut field = vec![0.0f64; side * side];
        for (i, cell) in self.cells.iter().enumerate() {
            if !keep(i) || !cell.alive(t) {
                continue;
            }
            let amp = cell.amplitude_at(t);
            if amp <= 0.0 {
                continue;
            }
            let sigma = cell.sigma_at(t);
            let (cx, cy) = self.position(cell, t as f64);
            let reach = 4.0 * sigma;
            let x0 = (cx - reach).floor().max(0.0) as usize;
            let y0 = (cy - reach).floor().max(0.0) as usize;
            let x1 = ((cx + reach).ceil().max(0.0) as usize).min(side);
            let y1 = ((cy + reach).ceil().max(0.0) as usize).min(side);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for y in y0..y1 {
                let dy = y as f64 - cy;
                for x in x0..x1 {
                    let dx = x as f64 - cx;
                    field[y * side + x] += amp * (-(dx * dx + dy * dy) * inv).exp();
                }
            }
        }
        field.into_iter().map(|v| v.clamp(0.0, 255.0) as f32).collect()
    }

    /// Observed frames: clean field plus texture noise on echo pixels,
    /// rounded to integers in [0, 255].
    pub fn render(&self) -> FrameSeq {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut out = FrameSeq::zeros(self.frames, self.side);
        for t in 0..self.frames {
            let clean = self.render_clean(t);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ (0x9e37_79b9 * (t as u64 + 1)));
            let normal = Normal::new(0.0, self.noise_sigma.max(1e-12)).expect("finite sigma");
            for (o, &v) in out.frame_mut(t).iter_mut().zip(&clean) {
                let noise = if self.noise_sigma > 0.0 && v >= 1.0 { normal.sample(&mut rng) } else { 0.0 };
                *o = (v as f64 + noise).round().clamp(0.0, 255.0) as f32;
            }
        }
        out
    }
}

/// A generated event with its frames and generator-derived attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarEvent {
    pub frames: FrameSeq,
    pub params: StormParams,
    pub truth: AttributeRecord,
    pub cadence_min: u32,
}
