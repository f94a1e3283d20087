//! Command-line front end: both roles, run files, reports and the scaling
//! benchmark.

pub mod bench;
pub mod commands;
pub mod config_file;
pub mod prompt;
pub mod report;
