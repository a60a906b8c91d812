//! Bias-council debiasing with an adaptive agreement loss, plus the synthetic
//! data, metrics and analytic tools around it.

mod error;

pub mod council;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod presets;
pub mod synth;
pub mod theorem;
pub mod trainer;

pub use error::{Error, Result};
