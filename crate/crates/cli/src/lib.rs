//! Library side of the `dynbatch` command: config loading and the four
//! subcommands, callable from tests without spawning a process.

pub mod commands;
pub mod config;

pub use commands::{cmd_evaluate, cmd_gen_corpus, cmd_report, cmd_train};
pub use config::RunConfigFile;
