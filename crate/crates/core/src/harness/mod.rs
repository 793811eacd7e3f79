//! Experiment driver: configuration, output formats, reference oracles and
//! the subcommands exposed by the command-line tool.

pub mod commands;
pub mod config;
pub mod io;
pub mod oracle;
pub mod selftest;

pub use config::ExperimentConfig;
