//! Synthetic radar events, chain-of-thought dataset construction and a small
//! unified model for nowcasting, inversion and radar understanding.

pub mod cot;
pub mod error;
pub mod frames;
pub mod model;
pub mod stormsim;
pub mod tasks;
pub mod trainer;

pub use error::{CoreError, Result};
pub use frames::FrameSeq;
