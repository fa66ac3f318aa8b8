//! Density-controllable haze synthesis: a physically based haze renderer for
//! procedural scenes, an unpaired translation model with shared content and
//! style encoders, density control by style interpolation, and the metrics
//! and probes that check the learned representation.

pub mod config;
pub mod data_pipeline;
pub mod density_control;
pub mod error;
pub mod evalprobe;
pub mod grid;
pub mod imageio;
pub mod manifest;
pub mod networks;
pub mod objectives;
pub mod plot;
pub mod scene_synth;
pub mod trainer;
pub mod workflow;

pub use error::{Error, Result};
pub use grid::ImageGrid;
