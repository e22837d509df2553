//! Library side of the `mmrd` command-line tool, exposed so the commands
//! can be driven from tests.

pub mod args;
pub mod commands;
pub mod error;
pub mod pipeline;
pub mod run_dir;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
