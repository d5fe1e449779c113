//! Command-line front end: configuration, file formats and the
//! `simulate`, `fit`, `summarize`, `select-k` and `validate` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
