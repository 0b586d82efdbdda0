//! Command-line front end: configuration, checkpoints, image export and the
//! `train`, `eval`, `export-attn` and `ablate` commands. The [`app`] module
//! holds the argument parser and dispatch behind the `cat` binary.

pub mod app;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;

pub use config::RunConfig;
pub use error::{CliError, Result};
