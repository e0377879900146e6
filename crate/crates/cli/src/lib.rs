//! Pipeline commands behind the `mhc` binary.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

pub use config::RunConfig;
pub use error::CliError;
