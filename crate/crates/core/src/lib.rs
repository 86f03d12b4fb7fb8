//! Geometry of loss-landscape minima.
//!
//! The crate covers the analytic side (benchmark objectives and the local
//! curvature of their global minima) and the learned side (a small ReLU MLP
//! trained on samples of those objectives, three sharpness metrics measured on
//! the trained model, safety metrics over prediction records, seeded study
//! orchestration and 2-D loss-surface grids).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod landscape;
pub mod nncore;
pub mod objectives;
pub mod rng;
pub mod safety_metrics;
pub mod sharpness;

pub use error::{Error, Result};
pub use objectives::Objective;
