use numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A `len x side x side` stack of intensity frames, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSeq {
    len: usize,
    side: usize,
    data: Vec<f32>,
}

impl FrameSeq {
    pub fn new(len: usize, side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != len * side * side {
            return Err(CoreError::Shape(format!("{} values for {len} frames of {side}x{side}", data.len())));
        }
        Ok(FrameSeq { len, side, data })
    }

    pub fn zeros(len: usize, side: usize) -> Self {
        FrameSeq { len, side, data: vec![0.0; len * side * side] }
    }

    pub fn from_frames(side: usize, frames: &[&[f32]]) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * side * side);
        for f in frames {
            if f.len() != side * side {
                return Err(CoreError::Shape(format!("frame of {} values for side {side}", f.len())));
            }
            data.extend_from_slice(f);
        }
        Ok(FrameSeq { len: frames.len(), side, data })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn frame_len(&self) -> usize {
        self.side * self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.frame_len().max(1)).take(self.len)
    }

    pub fn window(&self, start: usize, len: usize) -> Result<FrameSeq> {
        if start + len > self.len {
            return Err(CoreError::Shape(format!("window {start}..{} of {} frames", start + len, self.len)));
        }
        let n = self.frame_len();
        Ok(FrameSeq { len, side: self.side, data: self.data[start * n..(start + len) * n].to_vec() })
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.len, self.side, self.side], self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match t.shape() {
            [l, h, w] if h == w => FrameSeq::new(*l, *h, t.data().to_vec()),
            s => Err(CoreError::Shape(format!("expected [T,S,S] tensor, got {s:?}"))),
        }
    }
}
