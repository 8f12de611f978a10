//! Config-driven command-line pipeline around the `flygm` library.

pub mod cli;
pub mod commands;
pub mod compare;
pub mod config;
pub mod exit;
pub mod pipeline;
pub mod run;

pub use cli::run;
pub use config::RunConfig;
