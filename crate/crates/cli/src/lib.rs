//! Scenario runner for the `speedscale` command-line tool.

pub mod config;
pub mod runner;

pub use config::{load, ConfigError, Overrides, Prepared};
pub use runner::{compare, run, Report};
