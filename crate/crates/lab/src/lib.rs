//! IO, file formats, configuration, and pipeline orchestration around
//! `difflab-core`.

pub mod config;
pub mod container;
pub mod error;
pub mod model_io;
pub mod pgm;
pub mod stages;

pub use config::RunConfig;
pub use error::LabError;
pub use stages::{ReconMode, StageCtx, TrackChoice};
