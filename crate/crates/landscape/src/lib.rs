//! A small, mass-conservative nitrogen landscape used as the simulator behind
//! the sensitivity pipeline.
//!
//! The landscape is a tilted rectangle of square pixels. Each pixel carries a
//! surface soil layer (HS), an intermediate layer (HI) and a groundwater store.
//! Soil layers are split into sublayers whose thickness is the vertical
//! resolution factor; dissolved nitrogen moves through them as a chain of
//! mixing cells. Groundwater drains downslope with an exponential
//! transmissivity profile and leaves through the lowest row.
//!
//! Pixels that share a land use and an elevation band share one soil column,
//! so the per-day cost is dominated by the groundwater sweep.

pub mod assignment;
pub mod config;
pub mod forcing;
pub mod model;
pub mod output;

pub use assignment::{FactorAssignment, FertilizerType};
pub use config::{Landscape, LandscapeConfig, Rates};
pub use forcing::Forcing;
pub use model::{simulate, PixelState, Simulation};
pub use output::{mass_balance, Outcome, OutcomeKind, RunOutput, YearBalance};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid landscape configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} on day {day}")]
    NonFiniteState { day: usize, what: String },
    #[error("forcing: {0}")]
    Forcing(String),
    #[error(transparent)]
    Core(#[from] gsa_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
