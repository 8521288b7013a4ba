use crate::frames::FrameSeq;

/// Separable Gaussian blur with clamp-to-edge borders; radius is `ceil(3 sigma)`.
pub fn gaussian_blur(frame: &[f32], side: usize, sigma: f64) -> Vec<f32> {
    assert_eq!(frame.len(), side * side, "frame is not {side}x{side}");
    if sigma <= 0.0 {
        return frame.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize| i.clamp(0, side as isize - 1) as usize;

    let mut tmp = vec![0.0f64; side * side];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * frame[y * side + clamp(x as isize + k as isize - r)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - r) * side + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Infrared surrogates `(ir069, ir107)`: complemented blurs at sigma 2 and 4.
pub fn derive_satellite(frames: &FrameSeq) -> (FrameSeq, FrameSeq) {
    let side = frames.side();
    let channel = |sigma: f64| {
        let mut out = FrameSeq::zeros(frames.len(), side);
        for t in 0..frames.len() {
            let blurred = gaussian_blur(frames.frame(t), side, sigma);
            for (o, b) in out.frame_mut(t).iter_mut().zip(blurred) {
                *o = (255.0 - b).clamp(0.0, 255.0);
            }
        }
        out
    };
    (channel(2.0), channel(4.0))
}
