//! File formats, experiment orchestration and the `mvboost` command line on
//! top of [`mvboost_core`].

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;

pub use config::Config;
pub use error::{CliError, Result};
