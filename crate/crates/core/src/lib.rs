//! Desk-scale conditional diffusion laboratory.
//!
//! Everything algorithmic lives here: dense f64 arrays with reverse-mode
//! autodiff, DDIM noise-schedule algebra, a small conditional denoiser,
//! DDPM training with a reusable Adam optimizer, trajectory-recording
//! inversion, per-timestep prompt redescription with its alignment baseline,
//! embedding-shift editing, evaluation metrics, and procedural toy domains.
//!
//! The crate is `no_std` (alloc required) and fully deterministic: every
//! source of randomness is an explicit counter-based generator, and repeated
//! runs from equal seeds produce bit-identical results.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod array;
pub mod data;
pub mod edit;
pub mod error;
pub mod fd;
pub mod gradcheck;
pub mod graph;
pub mod invert;
pub mod metrics;
pub mod mirror;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod train;

pub use array::Array;
pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use invert::{Reconstruction, ScheduleMeta, Trajectory};
pub use mirror::{MirrorReconstruction, PromptTrack, RewriteConfig};
pub use model::{Denoiser, DenoiserConfig, GuidanceConfig};
pub use rng::CounterRng;
pub use schedule::{Level, NoiseSchedule, Transition};
pub use train::{AdamConfig, AdamState, TrainConfig};
