//! Landscape geometry, land-use layout and process constants.

use std::path::{Path, PathBuf};

use gsa_core::tensor::{GridMeta, LandUse};
use serde::{Deserialize, Serialize};

use crate::forcing::Forcing;
use crate::{Error, Result};

/// First-order rate constants and fixed soil properties. Rates are per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    /// Soil organic N per metre of HS depth (kg N/ha/m) at the start of a run.
    pub humus_density: f64,
    /// Relative humus content of unmanaged land.
    pub unmanaged_humus: f64,
    pub mineralization: f64,
    pub nitrification: f64,
    pub volatilization: f64,
    /// Share of nitrified N lost as gas.
    pub gaseous_loss: f64,
    /// NOx share of the gaseous loss; the rest is N2O.
    pub nox_share: f64,
    pub nh4_retardation: f64,
    /// Fraction of HS water above field capacity percolating per day.
    pub percolation: f64,
    /// Fraction of HI water above field capacity draining to groundwater per day.
    pub drainage: f64,
    /// Largest fraction of HS mineral N plants can take in one day.
    pub uptake_fraction: f64,
    /// Potential evapotranspiration per degree above zero (mm/day/degC).
    pub pet_per_degree: f64,
    pub groundwater_thickness: f64,
    pub groundwater_porosity: f64,
    /// Temperature lapse rate (degC/m).
    pub lapse_rate: f64,
    /// Fraction of rain on farm buildings that runs off directly.
    pub building_runoff: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            humus_density: 20_000.0,
            unmanaged_humus: 1.5,
            mineralization: 0.0002,
            nitrification: 0.25,
            volatilization: 0.04,
            gaseous_loss: 0.02,
            nox_share: 0.6,
            nh4_retardation: 5.0,
            percolation: 0.5,
            drainage: 0.5,
            uptake_fraction: 0.2,
            pet_per_degree: 0.15,
            groundwater_thickness: 1.5,
            groundwater_porosity: 0.3,
            lapse_rate: 0.0065,
            building_runoff: 0.8,
        }
    }
}

/// Land-use proportions: unmanaged share and per-farm share of the area.
const UNMANAGED_FRACTION: f64 = 0.16;
const FARM_FRACTION: f64 = 1.0 / 300.0;
const UNMANAGED_CENTRES: [(f64, f64); 4] = [(0.2, 0.2), (0.8, 0.3), (0.25, 0.75), (0.8, 0.85)];
const FARM_CENTRES: [(f64, f64); 2] = [(0.5, 0.4), (0.45, 0.65)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Pixels across and down the slope at the reference mesh.
    pub nx: usize,
    pub ny: usize,
    pub reference_mesh: f64,
    /// Elevation difference between the top and bottom edges (m).
    pub slope_drop: f64,
    pub sim_years: usize,
    pub spinup_years: usize,
    /// Side of the square crop fields, in reference pixels.
    pub field_block: usize,
    /// Pixels sharing a land use within one band share a soil column.
    pub elevation_bands: usize,
    /// `day,precip_mm,temp_C` file; the bundled series when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing_csv: Option<PathBuf>,
    #[serde(default)]
    pub rates: Rates,
    /// Replaces the annual fertilizer amount of every crop (diagnostics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fertilizer_override: Option<f64>,
    /// Multiplies every transport of dissolved N with water; 0 disables leaching.
    #[serde(default = "one")]
    pub leaching_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl LandscapeConfig {
    /// 20 x 20 pixels at 50 m (100 ha).
    pub fn desk() -> Self {
        Self {
            nx: 20,
            ny: 20,
            reference_mesh: 50.0,
            slope_drop: 50.0,
            sim_years: 5,
            spinup_years: 2,
            field_block: 5,
            elevation_bands: 5,
            forcing_csv: None,
            rates: Rates::default(),
            fertilizer_override: None,
            leaching_factor: 1.0,
        }
    }

    /// 30 x 40 pixels at 50 m (300 ha).
    pub fn full() -> Self {
        Self { nx: 30, ny: 40, ..Self::desk() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn area_ha(&self) -> f64 {
        (self.nx * self.ny) as f64 * self.reference_mesh * self.reference_mesh / 1e4
    }

    pub fn days(&self) -> usize {
        self.sim_years * 365
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.nx < 4 || self.ny < 4 || !(self.reference_mesh > 0.0) {
            return bad(format!("grid {}x{} at {} m is too small", self.nx, self.ny, self.reference_mesh));
        }
        if self.spinup_years >= self.sim_years {
            return bad("spin-up must be shorter than the simulation".into());
        }
        if self.field_block == 0 || self.elevation_bands == 0 || self.elevation_bands > self.ny {
            return bad("field_block and elevation_bands must be positive, bands at most ny".into());
        }
        if !(self.slope_drop > 0.0) || !(0.0..=1.0).contains(&self.leaching_factor) {
            return bad("slope_drop must be positive and leaching_factor within [0, 1]".into());
        }
        if self.fertilizer_override.is_some_and(|x| !(x >= 0.0)) {
            return bad("fertilizer_override must be non-negative".into());
        }
        let r = &self.rates;
        let fractions = [r.mineralization, r.nitrification, r.volatilization, r.gaseous_loss, r.nox_share, r.percolation, r.drainage, r.uptake_fraction, r.groundwater_porosity, r.building_runoff];
        if fractions.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("rate fractions must lie in [0, 1]".into());
        }
        if !(r.humus_density >= 0.0) || !(r.unmanaged_humus >= 0.0) || !(r.nh4_retardation >= 1.0) || !(r.groundwater_thickness > 0.0) || !(r.pet_per_degree >= 0.0) || !r.lapse_rate.is_finite() {
            return bad("retardation >= 1, positive groundwater thickness and PET coefficient required".into());
        }
        Ok(())
    }

    /// Land use on the reference grid.
    pub fn reference_grid(&self) -> GridMeta {
        let (nx, ny) = (self.nx, self.ny);
        let n = nx * ny;
        let mut lu: Vec<Option<LandUse>> = vec![None; n];
        let centre_dist = |p: usize, (cx, cy): (f64, f64)| {
            let x = (p % nx) as f64 + 0.5 - cx * nx as f64;
            let y = (p / nx) as f64 + 0.5 - cy * ny as f64;
            x * x + y * y
        };
        let fill = |lu: &mut Vec<Option<LandUse>>, centre: (f64, f64), count: usize, kind: LandUse| {
            let mut free: Vec<usize> = (0..n).filter(|&p| lu[p].is_none()).collect();
            free.sort_by(|&a, &b| centre_dist(a, centre).total_cmp(&centre_dist(b, centre)).then(a.cmp(&b)));
            for &p in free.iter().take(count) {
                lu[p] = Some(kind);
            }
        };
        let unmanaged = (UNMANAGED_FRACTION * n as f64).round() as usize;
        for (i, &c) in UNMANAGED_CENTRES.iter().enumerate() {
            let share = unmanaged / 4 + usize::from(i < unmanaged % 4);
            fill(&mut lu, c, share, LandUse::Unmanaged);
        }
        let farm = ((FARM_FRACTION * n as f64).round() as usize).max(1);
        for &c in &FARM_CENTRES {
            fill(&mut lu, c, farm, LandUse::FarmBuilding);
        }
        let b = self.field_block;
        for p in 0..n {
            if lu[p].is_none() {
                let parity = ((p % nx) / b + (p / nx) / b) % 2;
                lu[p] = Some(if parity == 0 { LandUse::Maize } else { LandUse::Wheat });
            }
        }
        // Rebalance crops to within one pixel, flipping from the bottom-right corner.
        loop {
            let maize = lu.iter().filter(|&&l| l == Some(LandUse::Maize)).count();
            let wheat = lu.iter().filter(|&&l| l == Some(LandUse::Wheat)).count();
            if maize.abs_diff(wheat) <= 1 {
                break;
            }
            let (from, to) = if maize > wheat { (LandUse::Maize, LandUse::Wheat) } else { (LandUse::Wheat, LandUse::Maize) };
            let p = (0..n).rev().find(|&p| lu[p] == Some(from)).expect("surplus crop present");
            lu[p] = Some(to);
        }
        let land_use = lu.into_iter().map(|l| l.expect("every pixel assigned")).collect();
        GridMeta::new(self.reference_mesh, nx, ny, land_use).expect("valid reference grid")
    }
}

/// A validated configuration with its forcing loaded and reference layout built.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub config: LandscapeConfig,
    pub forcing: Forcing,
    pub reference: GridMeta,
}

impl Landscape {
    pub fn new(config: LandscapeConfig) -> Result<Self> {
        config.validate()?;
        let forcing = match &config.forcing_csv {
            Some(p) => Forcing::from_path(p)?,
            None => Forcing::fixture(),
        };
        Self::with_forcing(config, forcing)
    }

    pub fn with_forcing(config: LandscapeConfig, forcing: Forcing) -> Result<Self> {
        config.validate()?;
        if forcing.len() < config.days() {
            return Err(Error::Forcing(format!("{} days of forcing for a {}-day run", forcing.len(), config.days())));
        }
        let reference = config.reference_grid();
        Ok(Self { config, forcing, reference })
    }

    /// The nested grid at `mesh_width`, inheriting reference land use.
    pub fn grid(&self, mesh_width: f64) -> Result<GridMeta> {
        if mesh_width > self.reference.mesh_width * (1.0 + 1e-12) {
            return Ok(self.reference.coarsen(mesh_width)?);
        }
        Ok(self.reference.refine(mesh_width)?)
    }

    /// Elevation (m) of the centre of a pixel row, in reference-row units.
    pub fn elevation(&self, y_fraction: f64) -> f64 {
        self.config.slope_drop * (1.0 - y_fraction)
    }

    /// Slope gradient along the y axis.
    pub fn tan_beta(&self) -> f64 {
        self.config.slope_drop / (self.config.ny as f64 * self.config.reference_mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(g: &GridMeta) -> [usize; 4] {
        LandUse::ALL.map(|l| g.count(l))
    }

    #[test]
    fn full_scale_proportions() {
        let cfg = LandscapeConfig::full();
        assert_eq!(cfg.area_ha(), 300.0);
        let g = cfg.reference_grid();
        // maize, wheat, farm buildings, unmanaged at 0.25 ha per pixel
        assert_eq!(counts(&g), [500, 500, 8, 192]);
        assert!((g.area_ha() - 300.0).abs() < 1e-9);
    }

    #[test]
    fn desk_scale_proportions() {
        let g = LandscapeConfig::desk().reference_grid();
        assert_eq!(counts(&g), [167, 167, 2, 64]);
    }

    #[test]
    fn crops_form_a_checkerboard() {
        let g = LandscapeConfig::full().reference_grid();
        // the two crops alternate across block boundaries away from other land uses
        let mut alternations = 0;
        for y in 0..g.ny {
            for x in 0..g.nx - 5 {
                let (a, b) = (g.land_use[y * g.nx + x], g.land_use[y * g.nx + x + 5]);
                if a.is_crop() && b.is_crop() && a != b {
                    alternations += 1;
                }
            }
        }
        assert!(alternations > g.n_pixels() / 2);
    }

    #[test]
    fn refined_grids_keep_areas() {
        let land = Landscape::new(LandscapeConfig::desk()).unwrap();
        for mesh in [12.5, 25.0, 50.0] {
            let g = land.grid(mesh).unwrap();
            assert!((g.area_ha() - 100.0).abs() < 1e-9);
            for l in LandUse::ALL {
                let ha = g.count(l) as f64 * g.pixel_area_ha();
                assert!((ha - land.reference.count(l) as f64 * 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = LandscapeConfig::desk();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<LandscapeConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<LandscapeConfig>(&s.replace("\"nx\"", "\"nxx\"")).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = LandscapeConfig::desk();
        cfg.spinup_years = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = LandscapeConfig::desk();
        cfg.leaching_factor = 1.5;
        assert!(cfg.validate().is_err());
    }
}
