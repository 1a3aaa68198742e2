//! Simulated outcomes, their resampling to the reference grid, and the
//! annual nitrogen budget.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use gsa_core::tensor::{resample_to_reference, write_tensor, Aggregation, GridMeta, LandUse, OutcomeTensor, TimeAxis, TimeStep};
use serde::{Deserialize, Serialize};

use crate::assignment::FactorAssignment;
use crate::config::Landscape;
use crate::model::application;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Daily series at the catchment outlet.
    Outflow,
    /// Monthly per-pixel totals.
    Flux,
    /// Monthly per-pixel means.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Discharge,
    OutletNh4Conc,
    OutletNo3Conc,
    OutletNh4Load,
    OutletNo3Load,
    Evapotranspiration,
    Nh3Emission,
    NoxEmission,
    N2oEmission,
    Mineralization,
    Nitrification,
    Nh4Uptake,
    No3Uptake,
    Leaching,
    HsNh4,
    HsNo3,
    HiNh4,
    HiNo3,
    GroundwaterDepth,
    GroundwaterNh4Conc,
    GroundwaterNo3Conc,
}

pub(crate) const OUTFLOW_OUTCOMES: [Outcome; 5] = [
    Outcome::Discharge,
    Outcome::OutletNh4Conc,
    Outcome::OutletNo3Conc,
    Outcome::OutletNh4Load,
    Outcome::OutletNo3Load,
];

/// Map outcomes in storage order.
pub(crate) const MAP_OUTCOMES: [Outcome; 16] = [
    Outcome::Evapotranspiration,
    Outcome::Nh3Emission,
    Outcome::NoxEmission,
    Outcome::N2oEmission,
    Outcome::Mineralization,
    Outcome::Nitrification,
    Outcome::Nh4Uptake,
    Outcome::No3Uptake,
    Outcome::Leaching,
    Outcome::HsNh4,
    Outcome::HsNo3,
    Outcome::HiNh4,
    Outcome::HiNo3,
    Outcome::GroundwaterDepth,
    Outcome::GroundwaterNh4Conc,
    Outcome::GroundwaterNo3Conc,
];

impl Outcome {
    pub const ALL: [Outcome; 21] = [
        Outcome::Discharge,
        Outcome::OutletNh4Conc,
        Outcome::OutletNo3Conc,
        Outcome::OutletNh4Load,
        Outcome::OutletNo3Load,
        Outcome::Evapotranspiration,
        Outcome::Nh3Emission,
        Outcome::NoxEmission,
        Outcome::N2oEmission,
        Outcome::Mineralization,
        Outcome::Nitrification,
        Outcome::Nh4Uptake,
        Outcome::No3Uptake,
        Outcome::Leaching,
        Outcome::HsNh4,
        Outcome::HsNo3,
        Outcome::HiNh4,
        Outcome::HiNo3,
        Outcome::GroundwaterDepth,
        Outcome::GroundwaterNh4Conc,
        Outcome::GroundwaterNo3Conc,
    ];

    /// The seventeen outcomes analysed by default.
    pub const ANALYSIS_DEFAULT: [Outcome; 17] = [
        Outcome::Discharge,
        Outcome::OutletNh4Conc,
        Outcome::OutletNo3Conc,
        Outcome::OutletNh4Load,
        Outcome::OutletNo3Load,
        Outcome::Evapotranspiration,
        Outcome::Nh3Emission,
        Outcome::NoxEmission,
        Outcome::N2oEmission,
        Outcome::Mineralization,
        Outcome::Nh4Uptake,
        Outcome::No3Uptake,
        Outcome::HsNh4,
        Outcome::HsNo3,
        Outcome::HiNo3,
        Outcome::GroundwaterDepth,
        Outcome::GroundwaterNo3Conc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Discharge => "discharge",
            Outcome::OutletNh4Conc => "outlet_nh4_conc",
            Outcome::OutletNo3Conc => "outlet_no3_conc",
            Outcome::OutletNh4Load => "outlet_nh4_load",
            Outcome::OutletNo3Load => "outlet_no3_load",
            Outcome::Evapotranspiration => "evapotranspiration",
            Outcome::Nh3Emission => "nh3_emission",
            Outcome::NoxEmission => "nox_emission",
            Outcome::N2oEmission => "n2o_emission",
            Outcome::Mineralization => "mineralization",
            Outcome::Nitrification => "nitrification",
            Outcome::Nh4Uptake => "nh4_uptake",
            Outcome::No3Uptake => "no3_uptake",
            Outcome::Leaching => "leaching",
            Outcome::HsNh4 => "hs_nh4",
            Outcome::HsNo3 => "hs_no3",
            Outcome::HiNh4 => "hi_nh4",
            Outcome::HiNo3 => "hi_no3",
            Outcome::GroundwaterDepth => "groundwater_depth",
            Outcome::GroundwaterNh4Conc => "groundwater_nh4_conc",
            Outcome::GroundwaterNo3Conc => "groundwater_no3_conc",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Outcome::Discharge => "m3/day",
            Outcome::OutletNh4Conc | Outcome::OutletNo3Conc => "mg N/L",
            Outcome::OutletNh4Load | Outcome::OutletNo3Load => "kg N/day",
            Outcome::Evapotranspiration => "mm/month",
            Outcome::HsNh4 | Outcome::HsNo3 | Outcome::HiNh4 | Outcome::HiNo3 => "kg N/ha",
            Outcome::GroundwaterDepth => "m",
            Outcome::GroundwaterNh4Conc | Outcome::GroundwaterNo3Conc => "mg N/L",
            _ => "kg N/ha/month",
        }
    }

    pub fn kind(self) -> OutcomeKind {
        match self.map_index() {
            None => OutcomeKind::Outflow,
            Some(i) if i <= 8 => OutcomeKind::Flux,
            Some(_) => OutcomeKind::State,
        }
    }

    /// Fluxes and loads add up over area; states and concentrations average.
    pub fn aggregation(self) -> Aggregation {
        match self {
            Outcome::Discharge | Outcome::OutletNh4Load | Outcome::OutletNo3Load => Aggregation::Sum,
            o if o.kind() == OutcomeKind::Flux => Aggregation::Sum,
            _ => Aggregation::Mean,
        }
    }

    /// True for the gaseous emission outcomes.
    pub fn is_emission(self) -> bool {
        matches!(self, Outcome::Nh3Emission | Outcome::NoxEmission | Outcome::N2oEmission)
    }

    fn map_index(self) -> Option<usize> {
        MAP_OUTCOMES.iter().position(|&o| o == self)
    }

    fn outflow_index(self) -> Option<usize> {
        OUTFLOW_OUTCOMES.iter().position(|&o| o == self)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown outcome {s:?}")))
    }
}

/// Post spin-up record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// The grid the run was simulated on.
    pub grid: GridMeta,
    /// Simulation day and month of the first recorded sample.
    pub first_day: usize,
    pub first_month: usize,
    /// Daily outlet series, one per outflow outcome.
    pub(crate) outflow: Vec<Vec<f64>>,
    /// Month-major maps, one per map outcome.
    pub(crate) maps: Vec<Vec<f64>>,
    /// Landscape N stock (kg) at the start of the record and after every day.
    pub n_storage: Vec<f64>,
}

impl RunOutput {
    pub fn n_days(&self) -> usize {
        self.outflow[0].len()
    }

    pub fn n_months(&self) -> usize {
        self.maps[0].len() / self.grid.n_pixels()
    }

    pub fn time_axis(&self, outcome: Outcome) -> TimeAxis {
        match outcome.kind() {
            OutcomeKind::Outflow => TimeAxis { step: TimeStep::Daily, start: self.first_day, len: self.n_days() },
            _ => TimeAxis { step: TimeStep::Monthly, start: self.first_month, len: self.n_months() },
        }
    }

    /// Daily outlet series; `None` for map outcomes.
    pub fn series(&self, outcome: Outcome) -> Option<&[f64]> {
        outcome.outflow_index().map(|i| self.outflow[i].as_slice())
    }

    /// One month of a map outcome at the native grid; `None` for outlet series.
    pub fn map(&self, outcome: Outcome, month: usize) -> Option<&[f64]> {
        let n = self.grid.n_pixels();
        outcome.map_index().map(|i| &self.maps[i][month * n..(month + 1) * n])
    }

    /// Time-major values on the grid of `reference_mesh` (block means of finer pixels).
    pub fn outcome_values(&self, outcome: Outcome, reference_mesh: f64) -> Result<Vec<f64>> {
        if let Some(s) = self.series(outcome) {
            return Ok(s.to_vec());
        }
        let mut out = Vec::new();
        for m in 0..self.n_months() {
            let map = self.map(outcome, m).expect("map outcome");
            out.extend(resample_to_reference(map, &self.grid, reference_mesh)?);
        }
        Ok(out)
    }

    /// Single-run tensor at the native grid.
    pub fn to_tensor(&self, outcome: Outcome) -> Result<OutcomeTensor> {
        let grid = (outcome.kind() != OutcomeKind::Outflow).then(|| self.grid.clone());
        let values = match self.series(outcome) {
            Some(s) => s.to_vec(),
            None => self.maps[outcome.map_index().expect("map outcome")].clone(),
        };
        Ok(OutcomeTensor::new(outcome.name(), outcome.unit(), outcome.aggregation(), self.time_axis(outcome), grid, 1, values)?)
    }

    /// Writes every outcome as `<name>.bin` plus sidecar into `dir`.
    pub fn write_tensors(&self, dir: &Path, design_checksum: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for o in Outcome::ALL {
            write_tensor(&dir.join(format!("{}.bin", o.name())), &self.to_tensor(o)?, design_checksum)?;
        }
        Ok(())
    }

    /// Total N leaving through the outlet over the record (kg).
    pub fn outlet_export(&self) -> f64 {
        [Outcome::OutletNh4Load, Outcome::OutletNo3Load]
            .iter()
            .map(|&o| self.series(o).expect("outlet").iter().sum::<f64>())
            .sum()
    }

    /// Landscape total of a flux outcome over the record (kg, or mm x ha for ET).
    pub fn flux_total(&self, outcome: Outcome) -> f64 {
        match outcome.map_index() {
            Some(i) => self.maps[i].iter().sum::<f64>() * self.grid.pixel_area_ha(),
            None => self.series(outcome).map_or(0.0, |s| s.iter().sum()),
        }
    }
}

/// Nitrogen budget of one recorded year (kg N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearBalance {
    pub year: usize,
    pub inputs: f64,
    pub exports: f64,
    pub storage_change: f64,
    /// (inputs - exports - storage change), relative to inputs (or to the
    /// initial stock when nothing is applied).
    pub residual: f64,
}

/// Annual inputs against emissions, uptake, outlet loads and storage change.
pub fn mass_balance(output: &RunOutput, assignment: &FactorAssignment, landscape: &Landscape) -> Vec<YearBalance> {
    let grid = &output.grid;
    let ha = grid.pixel_area_ha();
    let n = grid.n_pixels();
    let override_amount = landscape.config.fertilizer_override;
    let annual_input: f64 = LandUse::ALL
        .iter()
        .map(|&lu| (0..365).map(|d| application(assignment, override_amount, lu, d)).sum::<f64>() * grid.count(lu) as f64 * ha)
        .sum();
    let export_maps = [
        Outcome::Nh3Emission,
        Outcome::NoxEmission,
        Outcome::N2oEmission,
        Outcome::Nh4Uptake,
        Outcome::No3Uptake,
    ];
    let years = output.n_days() / 365;
    (0..years)
        .map(|y| {
            let mut exports = 0.0;
            for o in export_maps {
                let map = &output.maps[o.map_index().expect("map outcome")];
                exports += map[y * 12 * n..(y + 1) * 12 * n].iter().sum::<f64>() * ha;
            }
            for o in [Outcome::OutletNh4Load, Outcome::OutletNo3Load] {
                exports += output.series(o).expect("outlet")[y * 365..(y + 1) * 365].iter().sum::<f64>();
            }
            let start = output.n_storage[y * 365];
            let storage_change = output.n_storage[(y + 1) * 365] - start;
            let scale = if annual_input > 0.0 { annual_input } else { start.max(f64::MIN_POSITIVE) };
            YearBalance {
                year: output.first_day / 365 + y,
                inputs: annual_input,
                exports,
                storage_change,
                residual: (annual_input - exports - storage_change) / scale,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_tables_are_consistent() {
        assert_eq!(Outcome::ALL.len(), OUTFLOW_OUTCOMES.len() + MAP_OUTCOMES.len());
        for o in Outcome::ALL {
            assert_eq!(o.name().parse::<Outcome>().unwrap(), o);
            assert_eq!(serde_json::to_string(&o).unwrap(), format!("\"{}\"", o.name()));
        }
        assert_eq!(Outcome::Leaching.kind(), OutcomeKind::Flux);
        assert_eq!(Outcome::HsNh4.kind(), OutcomeKind::State);
        assert_eq!(Outcome::Discharge.kind(), OutcomeKind::Outflow);
        let fluxes = Outcome::ANALYSIS_DEFAULT.iter().filter(|o| o.kind() == OutcomeKind::Flux).count();
        assert_eq!(fluxes, 7);
        assert!(Outcome::ANALYSIS_DEFAULT.iter().all(|o| Outcome::ALL.contains(o)));
    }
}
