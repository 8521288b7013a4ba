use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};

use crate::error::{CoreError, Result};
use crate::frames::FrameSeq;

pub const BACKGROUND: [u8; 3] = [12, 12, 24];

/// Bin lower edges and colors; bins are left-closed.
const BINS: [(f32, [u8; 3]); 7] = [
    (0.0, BACKGROUND),
    (16.0, [40, 170, 60]),
    (74.0, [235, 220, 50]),
    (133.0, [245, 140, 30]),
    (160.0, [220, 30, 30]),
    (181.0, [200, 40, 200]),
    (219.0, [255, 255, 255]),
];

pub fn colormap(v: f32) -> [u8; 3] {
    BINS.iter().rev().find(|(edge, _)| v >= *edge).map_or(BACKGROUND, |(_, c)| *c)
}

pub fn write_png(path: &Path, frame: &[f32], side: usize) -> Result<()> {
    if frame.len() != side * side {
        return Err(CoreError::Shape(format!("frame of {} values for side {side}", frame.len())));
    }
    let img =
        ImageBuffer::from_fn(side as u32, side as u32, |x, y| Rgb(colormap(frame[y as usize * side + x as usize])));
    img.save(path).map_err(|e| CoreError::Image(format!("{}: {e}", path.display())))
}

/// Writes `<prefix>_<t>.png` for every frame and returns the paths.
pub fn render_png(frames: &FrameSeq, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let path = dir.join(format!("{prefix}_{t:02}.png"));
        write_png(&path, frames.frame(t), frames.side())?;
        out.push(path);
    }
    Ok(out)
}

/// PNG bytes of one frame, for attachments.
pub(crate) fn png_bytes(frame: &[f32], side: usize) -> Result<Vec<u8>> {
    let img =
        ImageBuffer::from_fn(side as u32, side as u32, |x, y| Rgb(colormap(frame[y as usize * side + x as usize])));
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| CoreError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_edges_are_left_closed() {
        assert_eq!(colormap(0.0), BACKGROUND);
        assert_eq!(colormap(15.99), BACKGROUND);
        assert_eq!(colormap(16.0), BINS[1].1);
        assert_eq!(colormap(73.9), BINS[1].1);
        assert_eq!(colormap(74.0), BINS[2].1);
        assert_eq!(colormap(218.9), BINS[5].1);
        assert_eq!(colormap(219.0), [255, 255, 255]);
        assert_eq!(colormap(255.0), [255, 255, 255]);
    }
}
