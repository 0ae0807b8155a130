pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod krr;
pub mod landmarks;
pub mod manifest;
pub mod mesh;
pub mod metrics;
pub mod sensitivity;
pub mod synth;

pub use error::{Error, Result};
