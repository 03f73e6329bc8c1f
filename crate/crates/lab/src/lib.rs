//! File formats, experiment runner and command line for `pointrft-core`.

pub mod chart;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod prftpc;
pub mod records;
pub mod runner;
pub mod tables;

pub use error::{LabError, Result};
