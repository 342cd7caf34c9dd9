//! Command-line companion of `rumsim-core`: experiment configuration files,
//! CSV ingestion, experiment protocols, reports and run manifests.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
