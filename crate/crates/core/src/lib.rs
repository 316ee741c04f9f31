//! Finger-vein sensor-origin identification.
//!
//! The crate covers the whole experiment: building labeled corpora (real or
//! synthetic), preprocessing into fixed-size patches, declarative CNN
//! architectures with an analytic parameter counter and a CPU execution
//! engine, deterministic training, and one-vs-rest evaluation.

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod image;
pub mod model;
pub mod preprocess;
pub mod sensor;
pub mod train;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use sensor::SensorClass;
