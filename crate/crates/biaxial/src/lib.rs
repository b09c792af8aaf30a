//! File formats and command-line plumbing for the `biaxial-core` music
//! model: the NSM1 corpus cache, BAXL checkpoints, run configuration and
//! manifests, metric logs, and the training driver used by the `biaxial`
//! binary.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod emit;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod preprocess;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, Schedule};
pub use error::{Error, Result};
pub use manifest::RunManifest;
