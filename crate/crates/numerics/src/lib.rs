//! Desk-scale differentiable tensor substrate.
//!
//! The [`Graph`] executes operations eagerly and records a tape; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse. All model
//! code is generic over [`Real`] so the same graph can be instantiated in
//! `f64` for finite-difference checks.

mod error;
pub mod gradcheck;
mod graph;
pub mod optim;
pub mod owtr;
mod params;
mod real;
pub mod schedule;
mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::grad_check;
pub use graph::{AttnMask, AttnSpec, Graph, NodeId};
pub use optim::{adamw_step, adamw_step_masked, AdamWConfig, GradStore, OptimState};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use schedule::{lr_at, Schedule};
pub use tensor::Tensor;
