//! Experiment front end: config files, commands and their artifacts.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_perf, cmd_run, cmd_select, cmd_sweep, load_config, load_experiment, CommandError, Experiment, Overrides,
    FAST_TRIALS, SWEEP_COLUMNS,
};
pub use config::{ExperimentConfig, OutputFormat};
