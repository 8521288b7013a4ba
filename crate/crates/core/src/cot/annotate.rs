//! Deterministic attribute annotators: one reading observed frames, one
//! reading generator parameters.

use super::analysis::{
    components, dist, ls_velocity, position_label, thirds, three_means, track_main, Component, CELL_THRESHOLD,
};
use super::taxonomy::{compass_index, max_level_option, Attribute as A, AttributeRecord, DIRECTION, NOT_APPARENT};
use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;
use crate::stormsim::{StormParams, SPEED_BANDS};

/// Intensity change (peak units) at or below which intensity is unchanged.
pub const INTENSITY_TOLERANCE: f64 = 10.0;
/// Relative area change at or below which coverage is unchanged.
pub const AREA_TOLERANCE: f64 = 0.10;

fn speed_option(px_per_frame: f64, side: usize) -> &'static str {
    let frac = px_per_frame / side as f64;
    let bin = SPEED_BANDS.iter().filter(|&&b| frac >= b).count();
    crate::cot::taxonomy::SPEED[bin]
}

fn set_motion(rec: &mut AttributeRecord, v: Option<(f64, f64)>, side: usize) {
    let Some((vx, vy)) = v else {
        rec.put(A::MotionDirection, "no obvious motion", "the main system cannot be followed across frames");
        return;
    };
    let s = (vx * vx + vy * vy).sqrt();
    let why = format!("main system centroid moves {s:.3} px per frame");
    rec.put(A::MotionSpeed, speed_option(s, side), why.clone());
    if s < SPEED_BANDS[0] * side as f64 {
        rec.put(A::MotionDirection, "no obvious motion", why);
    } else {
        rec.put(A::MotionDirection, DIRECTION[compass_index(vx, vy)], why);
    }
}

/// Returns the intensity option chosen, if any.
fn set_intensity(rec: &mut AttributeRecord, peaks: &[f64]) -> Option<&'static str> {
    let (first, last) = thirds(peaks)?;
    let d = last - first;
    let choice = if d > INTENSITY_TOLERANCE {
        "strengthening"
    } else if d < -INTENSITY_TOLERANCE {
        "weakening"
    } else {
        "roughly unchanged"
    };
    rec.put(
        A::IntensityEvolution,
        choice,
        format!("main system peak changes by {d:.1} between the first and last thirds"),
    );
    Some(choice)
}

/// Attributes computed identically from any sequence of fields. Returns the
/// per-frame components, or `None` when no frame holds a cell.
fn fill_shared(rec: &mut AttributeRecord, fields: &[&[f32]], side: usize) -> Option<Vec<Vec<Component>>> {
    let peak = fields.iter().flat_map(|f| f.iter()).copied().fold(0.0f32, f32::max);
    rec.put(A::MaxPixelLevel, max_level_option(peak), format!("brightest pixel is {peak:.0}"));
    let comps: Vec<Vec<Component>> = fields.iter().map(|f| components(f, side)).collect();
    let Some(first) = comps.iter().find(|c| !c.is_empty()) else {
        rec.put(A::InitialPosition, "no clear main system", "no region exceeds the cell threshold");
        rec.put(A::MotionDirection, "no obvious motion", "no region exceeds the cell threshold");
        return None;
    };
    let main = &first[0];
    rec.put(
        A::InitialPosition,
        position_label(main.centroid, side),
        format!("largest cell centered near ({:.0}, {:.0})", main.centroid.0, main.centroid.1),
    );

    if fields.len() >= 2 {
        let counts: Vec<f64> = comps.iter().map(|c| c.len() as f64).collect();
        if let Some((a, b)) = thirds(&counts) {
            let choice = if b - a > 0.5 {
                "increasing"
            } else if a - b > 0.5 {
                "decreasing"
            } else {
                "roughly unchanged"
            };
            rec.put(A::CellCountChange, choice, format!("cell count goes from {a:.1} to {b:.1}"));
        }
        let area: Vec<f64> = comps.iter().map(|c| c.iter().map(|k| k.area as f64).sum()).collect();
        if let Some((a, b, c)) = three_means(&area) {
            let (up, down) = (1.0 + AREA_TOLERANCE, 1.0 - AREA_TOLERANCE);
            let choice = if b > up * a && c < down * b {
                "expand then shrink"
            } else if b < down * a && c > up * b {
                "shrink then gradually expand"
            } else if c > up * a {
                "expanding"
            } else if c < down * a {
                "rapidly shrinking"
            } else {
                "roughly unchanged"
            };
            rec.put(A::ArealCoverage, choice, format!("echo area {a:.0}, {b:.0}, {c:.0} pixels by thirds"));
        }
    }
    Some(comps)
}

fn set_organization(rec: &mut AttributeRecord, comps: &[Vec<Component>], intensity: Option<&str>) {
    let share: Vec<f64> = comps
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| c[0].area as f64 / c.iter().map(|k| k.area as f64).sum::<f64>())
        .collect();
    if share.len() < 2 {
        return;
    }
    let Some((kf, kl)) = thirds(&share) else { return };
    let choice = if kl - kf > 0.15 {
        if kf < 0.5 {
            "fragmented then becoming connected"
        } else {
            "becoming connected"
        }
    } else if kf - kl > 0.15 {
        "becoming fragmented"
    } else if kf >= 0.8 && intensity == Some("weakening") {
        "connected then gradually weakening"
    } else {
        "no obvious change"
    };
    rec.put(A::OrganizationEvolution, choice, format!("main cell holds {kf:.2} then {kl:.2} of the echo area"));
}

fn frame_morphology(comps: &[Component], side: usize) -> &'static str {
    let main = &comps[0];
    let total: usize = comps.iter().map(|c| c.area).sum();
    if comps.len() >= 4 && main.area * 2 < total {
        "scattered"
    } else if main.elongation > 2.5 {
        "banded"
    } else if main.area * 5 > side * side && main.peak < 150.0 {
        "layered"
    } else {
        "blob-like"
    }
}

/// Attributes from observed frames (at least two).
pub fn annotate_from_frames(frames: &FrameSeq) -> Result<AttributeRecord> {
    if frames.len() < 2 {
        return Err(CoreError::FrameCount { expected: "at least 2".into(), got: frames.len() });
    }
    let side = frames.side();
    let fields: Vec<&[f32]> = frames.frames().collect();
    let mut rec = AttributeRecord::new();
    let Some(comps) = fill_shared(&mut rec, &fields, side) else {
        return Ok(rec);
    };
    let first = comps.iter().find(|c| !c.is_empty()).expect("non-empty");
    rec.put(A::Morphology, frame_morphology(first, side), "shape of the echo field in the first frame");
    rec.put(A::RotationCenter, "no rotation", "rotation is not estimated from imagery");

    let track = track_main(&comps, side as f64 / 4.0);
    let points: Vec<(f64, (f64, f64))> =
        track.iter().enumerate().filter_map(|(t, c)| c.as_ref().map(|c| (t as f64, c.centroid))).collect();
    set_motion(&mut rec, ls_velocity(&points), side);
    let peaks: Vec<f64> = track.iter().flatten().map(|c| c.peak as f64).collect();
    let intensity = set_intensity(&mut rec, &peaks);
    set_organization(&mut rec, &comps, intensity);

    let areas: Vec<f64> = track.iter().flatten().map(|c| c.area as f64).collect();
    if let Some((a, b)) = thirds(&areas) {
        if b > 1.3 * a {
            rec.put(A::MorphEvolution, "expansion", "main cell footprint grows");
        } else if b < 0.75 * a {
            rec.put(A::MorphEvolution, "shrinkage", "main cell footprint shrinks");
        }
    }
    Ok(rec)
}

/// Static attributes of a single observed frame; the rest stay "not apparent".
pub fn annotate_frame(frame: &[f32], side: usize) -> AttributeRecord {
    let mut rec = AttributeRecord::new();
    if let Some(comps) = fill_shared(&mut rec, &[frame], side) {
        rec.put(A::Morphology, frame_morphology(&comps[0], side), "shape of the echo field");
    }
    rec.entries_reset(|a| a.is_static());
    rec
}

fn check_window(params: &StormParams, start: usize, len: usize) -> Result<()> {
    if len == 0 || start + len > params.frames {
        return Err(CoreError::FrameCount {
            expected: format!("window {start}+{len} inside {}", params.frames),
            got: len,
        });
    }
    Ok(())
}

/// Per-frame fields of the main group only.
fn main_fields(params: &StormParams, start: usize, len: usize) -> Vec<Vec<f32>> {
    (start..start + len).map(|t| params.render_cells(t, |i| params.main_group.contains(&i))).collect()
}

/// Velocity of the above-threshold centroid of the main group, by least squares.
pub(crate) fn main_velocity(fields: &[Vec<f32>], side: usize) -> Option<(f64, f64)> {
    let points: Vec<(f64, (f64, f64))> = fields
        .iter()
        .enumerate()
        .filter_map(|(t, f)| {
            let (mut w, mut wx, mut wy) = (0.0, 0.0, 0.0);
            for (i, &v) in f.iter().enumerate() {
                if v > CELL_THRESHOLD {
                    let e = (v - CELL_THRESHOLD) as f64;
                    w += e;
                    wx += e * (i % side) as f64;
                    wy += e * (i / side) as f64;
                }
            }
            (w > 0.0).then(|| (t as f64, (wx / w, wy / w)))
        })
        .collect();
    ls_velocity(&points)
}

pub(crate) fn main_peaks(fields: &[Vec<f32>]) -> Vec<f64> {
    fields
        .iter()
        .map(|f| f.iter().copied().fold(0.0f32, f32::max) as f64)
        .filter(|&p| p > CELL_THRESHOLD as f64)
        .collect()
}

fn morph_evolution(params: &StormParams, start: usize, len: usize) -> Option<(&'static str, String)> {
    let (t0, t1) = (start, start + len - 1);
    let main = &params.main_group;
    for (j, cell) in params.cells.iter().enumerate() {
        if main.contains(&j) || !(cell.alive(t0) && cell.alive(t1)) {
            continue;
        }
        for &m in main {
            let reach = |t: usize| 1.0 * (cell.sigma_at(t) + params.cells[m].sigma_at(t));
            let d0 = dist(params.position(cell, t0 as f64), params.position(&params.cells[m], t0 as f64));
            let d1 = dist(params.position(cell, t1 as f64), params.position(&params.cells[m], t1 as f64));
            if d0 > 2.2 * reach(t0) && d1 <= 1.2 * reach(t1) {
                return Some(("merging", format!("cell {j} closes from {d0:.1} to {d1:.1} px of the main system")));
            }
        }
    }
    let rate = params.main_group.first().map_or(0.0, |&m| params.cells[m].sigma_rate);
    let u = params.side as f64 / 64.0;
    if rate >= 0.05 * u {
        Some(("expansion", format!("main cells widen by {rate:.3} px per frame")))
    } else if rate <= -0.03 * u {
        Some(("shrinkage", format!("main cells narrow by {:.3} px per frame", -rate)))
    } else {
        None
    }
}

fn rotation_option(params: &StormParams) -> (&'static str, String) {
    match &params.global_rotation {
        Some(r) if r.rate != 0.0 => {
            let half = params.side as f64 / 2.0;
            let (dx, dy) = (r.center.0 - half, r.center.1 - half);
            if (dx * dx + dy * dy).sqrt() < params.side as f64 / 8.0 {
                ("location uncertain", "rotation center lies near the middle of the grid".into())
            } else {
                const SECTORS: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];
                (SECTORS[compass_index(dx, dy)], format!("rotation about ({:.0}, {:.0})", r.center.0, r.center.1))
            }
        }
        _ => ("no rotation", "the field translates without turning".into()),
    }
}

/// Attributes of frames `start..start + len` computed from the generator
/// parameters and their noise-free rendering.
pub fn annotate_from_params(params: &StormParams, start: usize, len: usize) -> Result<AttributeRecord> {
    check_window(params, start, len)?;
    let side = params.side;
    let clean: Vec<Vec<f32>> = (start..start + len).map(|t| params.render_clean(t)).collect();
    let fields: Vec<&[f32]> = clean.iter().map(|f| f.as_slice()).collect();
    let mut rec = AttributeRecord::new();
    let Some(comps) = fill_shared(&mut rec, &fields, side) else {
        if len == 1 {
            rec.entries_reset(|a| a.is_static());
        }
        return Ok(rec);
    };
    rec.put(A::Morphology, params.scenario.morphology(), "arrangement of the generated cells");
    if len == 1 {
        rec.entries_reset(|a| a.is_static());
        return Ok(rec);
    }
    let (rot, why) = rotation_option(params);
    rec.put(A::RotationCenter, rot, why);
    let main = main_fields(params, start, len);
    set_motion(&mut rec, main_velocity(&main, side), side);
    let intensity = set_intensity(&mut rec, &main_peaks(&main));
    set_organization(&mut rec, &comps, intensity);
    if let Some((choice, why)) = morph_evolution(params, start, len) {
        rec.put(A::MorphEvolution, choice, why);
    }
    Ok(rec)
}

/// Whether the parameter-derived direction, position, max level and intensity
/// sit clear of their class boundaries, so observation noise cannot flip them.
pub(crate) fn unambiguous(params: &StormParams) -> bool {
    const EDGES: [f32; 6] = [32.0, 74.0, 133.0, 160.0, 181.0, 219.0];
    let side = params.side;
    let clean: Vec<Vec<f32>> = (0..params.frames).map(|t| params.render_clean(t)).collect();
    let peak = clean.iter().flat_map(|f| f.iter()).copied().fold(0.0f32, f32::max);
    if EDGES.iter().any(|&e| peak >= e - 6.0 && peak < e + 3.0) {
        return false;
    }
    let Some(first) = clean.iter().map(|f| components(f, side)).find(|c| !c.is_empty()) else {
        return true;
    };
    if super::analysis::position_margin(first[0].centroid, side) < 1.0 {
        return false;
    }
    let main = main_fields(params, 0, params.frames);
    if let Some((vx, vy)) = main_velocity(&main, side) {
        let s = (vx * vx + vy * vy).sqrt();
        let thr = SPEED_BANDS[0] * side as f64;
        if s > 0.5 * thr && s < 2.0 * thr {
            return false;
        }
        if s >= 2.0 * thr {
            let from_north = (90.0 - (-vy).atan2(vx).to_degrees()).rem_euclid(360.0);
            let off = (from_north + 22.5).rem_euclid(45.0);
            if off.min(45.0 - off) < 6.0 {
                return false;
            }
        }
    }
    if let Some((a, b)) = thirds(&main_peaks(&main)) {
        let d = (b - a).abs();
        if d > INTENSITY_TOLERANCE - 5.0 && d < INTENSITY_TOLERANCE + 6.0 {
            return false;
        }
    }
    true
}

impl AttributeRecord {
    /// Resets every attribute not selected by `keep` to "not apparent".
    pub(crate) fn entries_reset(&mut self, keep: impl Fn(A) -> bool) {
        for a in A::ALL {
            if !keep(a) {
                self.put(a, NOT_APPARENT, "");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stormsim::{GaussianCell, Scenario};

    fn one_cell(center: (f64, f64), amp: f64, sigma: f64, v: (f64, f64), growth: f64, frames: usize) -> StormParams {
        StormParams {
            scenario: Scenario::BlobLike,
            cells: vec![GaussianCell {
                center,
                amplitude: amp,
                sigma,
                velocity: v,
                growth_rate: growth,
                sigma_rate: 0.0,
                birth_frame: 0,
                death_frame: frames - 1,
            }],
            main_group: vec![0],
            global_rotation: None,
            noise_sigma: 0.0,
            seed: 0,
            side: 64,
            frames,
        }
    }

    #[test]
    fn empty_scene() {
        let rec = annotate_from_frames(&FrameSeq::zeros(5, 16)).unwrap();
        assert_eq!(rec.choice(A::InitialPosition), "no clear main system");
        assert_eq!(rec.choice(A::MotionDirection), "no obvious motion");
        assert_eq!(rec.choice(A::IntensityEvolution), NOT_APPARENT);
        assert!(annotate_from_frames(&FrameSeq::zeros(1, 16)).is_err());
    }

    #[test]
    fn eastward_ramp_is_east_and_strengthening() {
        let p = one_cell((20.0, 32.0), 100.0, 5.0, (1.0, 0.0), 120.0 / 21.0, 22);
        let rec = annotate_from_frames(&p.render()).unwrap();
        assert_eq!(rec.choice(A::MotionDirection), "east");
        assert_eq!(rec.choice(A::IntensityEvolution), "strengthening");
        assert_eq!(rec.choice(A::InitialPosition), "W");
        let truth = annotate_from_params(&p, 0, 22).unwrap();
        assert_eq!(truth.choice(A::MotionDirection), "east");
        assert_eq!(truth.choice(A::IntensityEvolution), "strengthening");
    }

    #[test]
    fn northward_velocity_maps_to_north() {
        let p = one_cell((32.0, 40.0), 150.0, 5.0, (0.0, -0.8), 0.0, 12);
        assert_eq!(annotate_from_params(&p, 0, 12).unwrap().choice(A::MotionDirection), "north");
    }

    #[test]
    fn static_cell_peak_band() {
        let p = one_cell((32.0, 32.0), 200.0, 6.0, (0.0, 0.0), 0.0, 3);
        let rec = annotate_from_params(&p, 0, 3).unwrap();
        assert_eq!(rec.choice(A::MaxPixelLevel), "very strong (181–218)");
        assert_eq!(rec.choice(A::MotionDirection), "no obvious motion");
        assert_eq!(rec.choice(A::InitialPosition), "centered");
    }

    #[test]
    fn single_frame_keeps_static_only() {
        let p = one_cell((10.0, 10.0), 90.0, 4.0, (0.0, 0.0), 0.0, 2);
        let rec = annotate_frame(&p.render_clean(0), 64);
        assert_eq!(rec.choice(A::InitialPosition), "NW");
        assert_eq!(rec.choice(A::MaxPixelLevel), "weak (74–132)");
        assert_eq!(rec.choice(A::MotionDirection), NOT_APPARENT);
    }
}
