//! Masked image modeling pre-training at desk scale: block-wise masking on
//! raw images, low-resolution inputs, HOG or pixel reconstruction targets,
//! truncated encoders, configurable decoders and progressive resolution
//! schedules, plus an analytic cost model and throughput harness.

pub mod bench;
pub mod config;
pub mod error;
pub mod hog;
pub mod imageio;
pub mod masking;
pub mod models;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
