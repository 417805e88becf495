//! Library side of the `navfuse` command-line tool.

pub mod commands;
pub mod config;
pub mod plot;

pub use config::RunConfig;
