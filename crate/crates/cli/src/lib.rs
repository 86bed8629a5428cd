//! Library half of the `hlrp` command: checkpoint format and run config.

pub mod checkpoint;
pub mod config;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
