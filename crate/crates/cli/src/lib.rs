//! Command-line front end: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod replicate;

pub use error::CliError;
