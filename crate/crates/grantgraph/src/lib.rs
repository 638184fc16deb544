//! File formats, run configuration and the command-line pipeline around
//! `grantgraph-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;

pub use error::{CliError, CliResult};
