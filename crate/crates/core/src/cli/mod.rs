//! Command-line wiring: config files, subcommands, CSV artifacts, exit codes.
//!
//! Exit codes are stable: 0 success, 2 config/contract errors, 3 data
//! errors, 4 divergence, 5 checkpoint errors, 1 anything else.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_embed, cmd_eval, cmd_gen_data, cmd_theory, cmd_train, cmd_weights, exit_code,
    TheoryOutputs, TrainOutputs, TrainSummary,
};
pub use config::{RunConfig, SplitName};
