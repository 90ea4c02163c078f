//! Simulation laboratory for `splinenet`: data generation, Monte Carlo
//! experiments, reports and the `splinenet` command-line tool.

use std::path::Path;

pub mod cli;
pub mod config;
pub mod datagen;
pub mod experiments;
pub mod io;
pub mod rng;
pub mod stats;

pub use config::SimConfig;
pub use experiments::ExperimentReport;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] splinenet::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
