//! Scalable image codec producing three layered streams: a lossless 16-bit
//! instance profile that machine tasks decode on their own, lossless low-level
//! feature planes that let a learned predictor rebuild a general-quality
//! image, and a lossy residual that lifts it to high quality.

pub mod container;
pub mod entropy;
pub mod error;
pub mod imagery;
pub mod lossless;
pub mod metrics;
pub mod networks;
pub mod profile;
pub mod residual;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
