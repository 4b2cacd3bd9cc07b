//! File formats and the command-line interface.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod manifest;
pub mod report;
pub mod snapshot;
pub mod trace;
