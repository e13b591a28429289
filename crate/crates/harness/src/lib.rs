//! Experiment harness: the built-in grid, the replication runner, CSV and SVG
//! reports, and the `ebscreen` command line.

use std::path::{Path, PathBuf};

pub mod grid;
pub mod plots;
pub mod report;
pub mod runner;

pub use grid::{builtin_grid, find_experiment, ExperimentSpec};
pub use report::emit_report;
pub use runner::{run_experiment, ExperimentReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] ebscreen_core::Error),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}
