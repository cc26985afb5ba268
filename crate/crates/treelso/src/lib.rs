//! Command line, file formats and experiment plumbing around
//! [`treelso_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, Result};
