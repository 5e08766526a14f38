//! Point-cloud object re-identification.
//!
//! A symmetric cross-attention matching head over pluggable per-point
//! encoders, together with the tooling around it: oriented-box geometry for
//! extracting observations from detection logs, density-aware pair sampling,
//! training, and evaluation.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
