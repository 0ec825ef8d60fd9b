//! Experiment driver: flat key=value configs, one subcommand per
//! experiment, and self-describing run directories.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{default_run_dir, run, Command, RunSummary};
pub use config::{parse_config, ConfigError, RunConfig};

/// Environment variable naming the root under which run directories are
/// created when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "MANYGOALS_OUT";
