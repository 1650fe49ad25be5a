//! Labels from multi-annotator votes, a small softmax classifier trained on
//! one-hot or distributional targets, and calibration and agreement metrics.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
