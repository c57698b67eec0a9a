//! Command line and HTTP front end over `perfce-core`.
//!
//! Every command and endpoint is a thin adapter around [`ops`], so the CLI
//! and the service print identical JSON for identical inputs.

pub mod commands;
pub mod error;
pub mod ops;
pub mod server;

pub use commands::{run, Cli};
pub use error::CliError;
