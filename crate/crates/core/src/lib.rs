//! Coherence-based distributed sound-speed estimation and two-way aberration
//! correction for pulse-echo ultrasound.

pub mod beamform;
pub mod container;
pub mod display;
pub mod error;
pub mod geometry;
pub mod imgproc;
pub mod metrics;
pub mod pipeline;
pub mod presets;
pub mod wavemodel;

pub use error::{Error, Result};
