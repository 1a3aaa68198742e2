//! Stage implementations. Each reads its inputs from the artifact store, so a
//! stage can run in a later process than its upstream.

pub mod analyze;
pub mod design;
pub mod simulate;
pub mod synthesize;

use gsa_core::design::DesignMatrix;
use gsa_core::factors::FactorTable;
use landscape::Landscape;

use crate::config::PipelineConfig;
use crate::store::Store;
use crate::Result;

pub const DESIGN_CSV: &str = "design/design.csv";

pub struct Ctx<'a> {
    pub config: &'a PipelineConfig,
    pub store: Store,
    pub table: FactorTable,
    pub landscape: Landscape,
}

impl Ctx<'_> {
    pub fn load_design(&self) -> Result<DesignMatrix> {
        Ok(DesignMatrix::from_csv(&self.store.read_to_string(DESIGN_CSV)?)?)
    }
}

pub fn tensor_path(outcome: landscape::Outcome) -> String {
    format!("tensors/{}.bin", outcome.name())
}
