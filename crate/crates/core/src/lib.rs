//! NIR hemoglobin sensing pipeline: raw sensor frames to cognitive-load labels.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beer_lambert;
pub mod domain;
pub mod drift;
pub mod dsp;
pub mod error;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod simulator;
pub mod tables;
pub mod wire;

pub use error::{Error, Result};
