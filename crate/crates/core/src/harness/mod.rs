//! Experiment plumbing: run configuration, checkpoints, metrics files,
//! manifests, the CLI verbs, and the optimizer benchmark.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod metrics;
pub mod run;

pub use checkpoint::{Checkpoint, Cursor};
pub use config::{Experiment, RunConfig};
pub use run::{inspect_checkpoint, Runner};
