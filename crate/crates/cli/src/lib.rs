//! Pipeline orchestration for gamesynth: configuration, artifacts with a SHA-256
//! hash chain, stage commands and plot data.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::Context;
pub use error::{CliError, CliResult};
