//! Soccer field localization from one broadcast frame.
//!
//! A field hypothesis is four rays, two from each field vanishing point.
//! Scoring uses grass, line and circle evidence binned into integral
//! accumulators over the ray grid; the best hypothesis is found exactly by
//! branch and bound, and weights are learned with a structured SVM.

pub mod dataset;
pub mod ellipse;
pub mod error;
pub mod eval;
pub mod features;
pub mod field_model;
pub mod geometry;
pub mod inference;
pub mod learning;
pub mod mask;
pub mod oracle;
pub mod pipeline;
pub mod potentials;
pub mod synth;
pub mod vp_estimation;

pub use error::{Error, Result};
