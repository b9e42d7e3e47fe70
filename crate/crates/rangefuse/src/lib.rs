//! File formats, configuration, checkpoints, plots and the command-line
//! front end around `rangefuse-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod plot;
pub mod records;
pub mod tables;

pub use error::{Error, Result};
