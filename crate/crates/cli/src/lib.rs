//! Batch entry points for training, evaluation, data generation and
//! verification.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;
pub mod verify;

pub use config::{ModelKind, RunConfig};
pub use error::{CliError, Result};
