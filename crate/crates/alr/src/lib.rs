//! Experiment harness for adaptive label refinement: dataset readers, run
//! configuration, output files and the drivers behind the `alr` binary.

pub mod config;
pub mod error;
pub mod idx;
pub mod output;
pub mod run;
pub mod table;

pub use config::RunConfig;
pub use error::{Error, Result};
