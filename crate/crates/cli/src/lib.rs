//! Command-line driver: configuration files, subcommands and run provenance.

pub mod commands;
pub mod config;

pub use config::{ExperimentConfig, Profile};
