//! Command-line front end for the `sketchlab` Monte Carlo laboratory.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{run, Check, Outcome};
pub use config::{parse_config, ConfigError, ParseFailure, RunConfig};
pub use plot::emit_plot;

/// Exit code when the run finished but a check failed.
pub const EXIT_CHECKS_FAILED: i32 = 1;
/// Exit code when sampling or output failed after the config resolved.
pub const EXIT_RUNTIME: i32 = 8;
