//! End-to-end sensitivity experiment on the landscape surrogate.
//!
//! Stages run in a fixed order and each writes into its own directory under
//! the output root:
//!
//! | stage | writes |
//! |---|---|
//! | `design` | `design/` regular 3^(11-6) array, physical levels, strength report |
//! | `simulate` | `tensors/` one run x time x pixel tensor per outcome, `simulate/mass_balance.csv` |
//! | `analyze` | `analysis/` dynamic, spatial and aggregated indexes, PCA, run clustering |
//! | `synthesize` | `synthesis/` clustering of outcome profiles, biplot data, summary tables |
//! | `report` | `report/` plot-ready CSV bundles |
//!
//! A stage is skipped when the SHA-256 key of its inputs matches the key
//! stored under `.cache/` by the previous run.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod stages;
pub mod store;

pub use config::{AnalysisSettings, DesignSettings, PipelineConfig, ScalarAggregate, Seeds};
pub use pipeline::{run_pipeline, RunOptions, RunSummary, Stage, StageStatus};
pub use report::report;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("run {run} failed: {source}")]
    Simulation {
        run: usize,
        #[source]
        source: landscape::Error,
    },
    #[error("{context}: {source}")]
    Analysis {
        context: String,
        #[source]
        source: gsa_core::Error,
    },
    #[error(transparent)]
    Core(#[from] gsa_core::Error),
    #[error(transparent)]
    Landscape(#[from] landscape::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches the outcome or table being processed to a core error.
pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, gsa_core::Error> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Analysis { context: what(), source })
    }
}
