//! Configuration files, checkpoint and example formats, reports and the
//! experiment runner behind the `hibert` command.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use error::{CliError, Result};
