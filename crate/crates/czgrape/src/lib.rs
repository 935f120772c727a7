//! Command-line front end for closed-loop CZ pulse optimization on an
//! emulated two-transmon device.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;

pub use error::CliError;
