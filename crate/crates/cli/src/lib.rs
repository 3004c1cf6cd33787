//! Experiment pipeline behind the `calib-il` binary.

pub mod commands;
pub mod error;
pub mod logging;
pub mod pipeline;
pub mod spec;

pub use commands::{execute, Command, Options};
pub use error::{CliError, CliResult};
pub use spec::RunSpec;
