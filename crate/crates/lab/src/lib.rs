//! Disk formats, configuration, run manifests and the `crst` command line
//! around `crst-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod dataset;
pub mod error;
pub mod gridio;
pub mod manifest;
pub mod report;

pub use error::{LabError, Result};
