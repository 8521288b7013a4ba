use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;

/// Frames in a long (4-hour) event.
pub const LONG_EVENT: usize = 49;
/// Frames in a short event: exactly one input/target window.
pub const SHORT_EVENT: usize = 22;

pub const INPUT_FRAMES: usize = 10;
pub const TARGET_FRAMES: usize = 12;

/// Window start offsets for an event of `len` frames.
pub fn window_offsets(len: usize) -> Result<&'static [usize]> {
    match len {
        LONG_EVENT => Ok(&[0, 13, 27]),
        SHORT_EVENT => Ok(&[0]),
        _ => Err(CoreError::FrameCount { expected: "22 or 49".into(), got: len }),
    }
}

/// `(inputs, targets)` pairs of 10 and 12 frames.
pub fn split_pairs(frames: &FrameSeq) -> Result<Vec<(FrameSeq, FrameSeq)>> {
    window_offsets(frames.len())?
        .iter()
        .map(|&o| Ok((frames.window(o, INPUT_FRAMES)?, frames.window(o + INPUT_FRAMES, TARGET_FRAMES)?)))
        .collect()
}

/// Keep iff the mean fraction of pixels at or above 16 exceeds 1%.
pub fn filter_low_signal(frames: &FrameSeq) -> bool {
    if frames.is_empty() || frames.frame_len() == 0 {
        return false;
    }
    let hits = frames.data().iter().filter(|&&v| v >= 16.0).count();
    // integer comparison keeps the exact-1% boundary a drop
    hits * 100 > frames.data().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_tile_long_and_short_events() {
        let long = FrameSeq::new(49, 2, (0..49 * 4).map(|i| (i / 4) as f32).collect()).unwrap();
        let pairs = split_pairs(&long).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].0.frame(0)[0], 27.0);
        assert_eq!(pairs[2].1.frame(11)[0], 48.0);
        assert_eq!(split_pairs(&FrameSeq::zeros(22, 2)).unwrap().len(), 1);
        assert!(split_pairs(&FrameSeq::zeros(30, 2)).is_err());
    }

    #[test]
    fn coverage_threshold_is_strict() {
        assert!(!filter_low_signal(&FrameSeq::zeros(2, 10)));
        let mut f = FrameSeq::zeros(2, 10);
        f.frame_mut(0)[0] = 16.0;
        f.frame_mut(1)[0] = 16.0;
        assert!(!filter_low_signal(&f));
        f.frame_mut(1)[1] = 16.0;
        assert!(filter_low_signal(&f));
        let half = FrameSeq::new(1, 10, (0..100).map(|i| if i < 50 { 255.0 } else { 0.0 }).collect()).unwrap();
        assert!(filter_low_signal(&half));
    }
}
