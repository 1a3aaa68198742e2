//! Daily explicit update of soil columns and the downslope groundwater sweep.

use gsa_core::tensor::{month_of_day, GridMeta, LandUse};
use serde::{Deserialize, Serialize};

use crate::assignment::FactorAssignment;
use crate::config::Landscape;
use crate::output::{RunOutput, MAP_OUTCOMES, OUTFLOW_OUTCOMES};
use crate::{Error, Result};

/// Fertilization days (0-based day of year): maize mid-April and mid-May, wheat in March.
pub const MAIZE_APPLICATIONS: [usize; 2] = [104, 134];
pub const WHEAT_APPLICATIONS: [usize; 2] = [59, 79];
/// Crop-specific reference amounts; their mean is the amount factor's baseline.
pub const MAIZE_REFERENCE: f64 = 190.0;
pub const WHEAT_REFERENCE: f64 = 170.0;
const AMOUNT_BASELINE: f64 = 180.0;

const INITIAL_NH4: f64 = 2.0;
const INITIAL_NO3: f64 = 10.0;

/// Fertilizer applied to one hectare of `lu` on day-of-year `doy` (kg N/ha).
pub fn application(assignment: &FactorAssignment, override_amount: Option<f64>, lu: LandUse, doy: usize) -> f64 {
    let (days, reference) = match lu {
        LandUse::Maize => (MAIZE_APPLICATIONS, MAIZE_REFERENCE),
        LandUse::Wheat => (WHEAT_APPLICATIONS, WHEAT_REFERENCE),
        _ => return 0.0,
    };
    if !days.contains(&doy) {
        return 0.0;
    }
    let annual = override_amount.unwrap_or(assignment.amount * reference / AMOUNT_BASELINE);
    annual / days.len() as f64
}

/// Daily crop N demand (kg N/ha): a Gaussian seasonal curve.
fn demand(lu: LandUse, doy: usize) -> f64 {
    let (peak_day, width, peak) = match lu {
        LandUse::Maize => (190.0, 30.0, 2.5),
        LandUse::Wheat => (120.0, 30.0, 2.2),
        LandUse::Unmanaged => (160.0, 45.0, 0.3 * 2.0),
        LandUse::FarmBuilding => return 0.0,
    };
    let z = (doy as f64 - peak_day) / width;
    peak * (-0.5 * z * z).exp()
}

fn initial_humus(rates: &crate::config::Rates, lu: LandUse, hs_depth: f64) -> f64 {
    let relative = match lu {
        LandUse::FarmBuilding => 0.0,
        LandUse::Unmanaged => rates.unmanaged_humus,
        _ => 1.0,
    };
    rates.humus_density * hs_depth * relative
}

fn et_factor(lu: LandUse) -> f64 {
    if lu == LandUse::FarmBuilding {
        0.3
    } else {
        1.0
    }
}

/// Water (m) and nitrogen (kg N/ha) held by one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelState {
    pub hs_water: f64,
    pub hi_water: f64,
    pub gw_water: f64,
    pub hs_nh4: f64,
    pub hs_no3: f64,
    pub hi_nh4: f64,
    pub hi_no3: f64,
    pub gw_nh4: f64,
    pub gw_no3: f64,
    pub organic: f64,
}

impl PixelState {
    pub fn total_n(&self) -> f64 {
        self.hs_nh4 + self.hs_no3 + self.hi_nh4 + self.hi_no3 + self.gw_nh4 + self.gw_no3 + self.organic
    }
}

/// Layer capacities derived from the soil factors.
#[derive(Debug, Clone, Copy)]
pub struct SoilGeometry {
    pub ns: usize,
    pub ni: usize,
    pub hs_capacity: f64,
    pub hs_field_capacity: f64,
    pub hi_capacity: f64,
    pub hi_field_capacity: f64,
    pub gw_capacity: f64,
}

impl SoilGeometry {
    pub fn new(a: &FactorAssignment, gw_thickness: f64, gw_porosity: f64) -> Self {
        let micro_share = a.micro_macro / (1.0 + a.micro_macro);
        let hs_micro = a.porosity * micro_share;
        let macro_ = a.porosity / (1.0 + a.micro_macro);
        let hi_micro = a.micro_ratio * hs_micro;
        Self {
            ns: ((a.hs_depth / a.layer_thickness).round() as usize).max(1),
            ni: ((a.hi_depth / a.layer_thickness).round() as usize).max(1),
            hs_capacity: a.hs_depth * a.porosity,
            hs_field_capacity: a.hs_depth * hs_micro,
            hi_capacity: a.hi_depth * (hi_micro + macro_),
            hi_field_capacity: a.hi_depth * hi_micro,
            gw_capacity: gw_thickness * gw_porosity,
        }
    }
}

// Indexes into the per-column monthly accumulator.
const ACC_ET: usize = 0;
const ACC_NH3: usize = 1;
const ACC_NOX: usize = 2;
const ACC_N2O: usize = 3;
const ACC_MIN: usize = 4;
const ACC_NIT: usize = 5;
const ACC_UP_NH4: usize = 6;
const ACC_UP_NO3: usize = 7;
const ACC_LEACH: usize = 8;
const ACC_HS_NH4: usize = 9;
const ACC_HS_NO3: usize = 10;
const ACC_HI_NH4: usize = 11;
const ACC_HI_NO3: usize = 12;
const N_ACC: usize = 13;

#[derive(Debug, Clone)]
struct Column {
    lu: LandUse,
    n_px: usize,
    temp_offset: f64,
    ws: f64,
    wi: f64,
    nh4: Vec<f64>,
    no3: Vec<f64>,
    org: f64,
    // today's exchanges, per unit area
    runoff: f64,
    drain: f64,
    runoff_nh4: f64,
    runoff_no3: f64,
    leach_nh4: f64,
    leach_no3: f64,
    acc: [f64; N_ACC],
}

impl Column {
    fn mineral(&self, range: std::ops::Range<usize>) -> (f64, f64) {
        (self.nh4[range.clone()].iter().sum(), self.no3[range].iter().sum())
    }

    fn total_n(&self) -> f64 {
        self.nh4.iter().sum::<f64>() + self.no3.iter().sum::<f64>() + self.org
    }
}

/// One run, advanced a day at a time.
pub struct Simulation<'a> {
    land: &'a Landscape,
    assignment: FactorAssignment,
    grid: GridMeta,
    soil: SoilGeometry,
    columns: Vec<Column>,
    column_of: Vec<usize>,
    wg: Vec<f64>,
    gnh4: Vec<f64>,
    gno3: Vec<f64>,
    day: usize,
    lateral_scale: f64,
    scratch_nh4: Vec<f64>,
    scratch_no3: Vec<f64>,
    // post spin-up records
    outflow: Vec<Vec<f64>>,
    maps: Vec<Vec<f64>>,
    storage: Vec<f64>,
    gw_acc: [Vec<f64>; 3],
    month_days: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(assignment: &FactorAssignment, land: &'a Landscape) -> Result<Self> {
        assignment.check_physical()?;
        let cfg = &land.config;
        let grid = land.grid(assignment.mesh_width)?;
        let soil = SoilGeometry::new(assignment, cfg.rates.groundwater_thickness, cfg.rates.groundwater_porosity);
        let bands = cfg.elevation_bands;
        let mut index = vec![usize::MAX; bands * 4];
        let mut columns = Vec::new();
        let mut column_of = Vec::with_capacity(grid.n_pixels());
        for p in 0..grid.n_pixels() {
            let y_frac = ((p / grid.nx) as f64 + 0.5) / grid.ny as f64;
            let band = ((y_frac * bands as f64) as usize).min(bands - 1);
            let lu = grid.land_use[p];
            let key = band * 4 + lu as usize;
            if index[key] == usize::MAX {
                index[key] = columns.len();
                let band_elev = land.elevation((band as f64 + 0.5) / bands as f64);
                let n = soil.ns + soil.ni;
                let mut nh4 = vec![0.0; n];
                let mut no3 = vec![0.0; n];
                for k in 0..soil.ns {
                    nh4[k] = INITIAL_NH4 / soil.ns as f64;
                    no3[k] = INITIAL_NO3 / soil.ns as f64;
                }
                columns.push(Column {
                    lu,
                    n_px: 0,
                    temp_offset: -cfg.rates.lapse_rate * (band_elev - cfg.slope_drop / 2.0),
                    ws: soil.hs_field_capacity,
                    wi: soil.hi_field_capacity,
                    nh4,
                    no3,
                    org: initial_humus(&cfg.rates, lu, assignment.hs_depth),
                    runoff: 0.0,
                    drain: 0.0,
                    runoff_nh4: 0.0,
                    runoff_no3: 0.0,
                    leach_nh4: 0.0,
                    leach_no3: 0.0,
                    acc: [0.0; N_ACC],
                });
            }
            columns[index[key]].n_px += 1;
            column_of.push(index[key]);
        }
        let n_px = grid.n_pixels();
        let post_days = (cfg.sim_years - cfg.spinup_years) * 365;
        let months = (cfg.sim_years - cfg.spinup_years) * 12;
        let lateral_scale = land.tan_beta() / grid.mesh_width;
        Ok(Self {
            land,
            assignment: assignment.clone(),
            soil,
            columns,
            column_of,
            wg: vec![0.0; n_px],
            gnh4: vec![0.0; n_px],
            gno3: vec![0.0; n_px],
            day: 0,
            lateral_scale,
            scratch_nh4: vec![0.0; soil.ns + soil.ni],
            scratch_no3: vec![0.0; soil.ns + soil.ni],
            outflow: vec![Vec::with_capacity(post_days); OUTFLOW_OUTCOMES.len()],
            maps: vec![Vec::with_capacity(months * n_px); MAP_OUTCOMES.len()],
            storage: Vec::with_capacity(post_days + 1),
            gw_acc: [vec![0.0; n_px], vec![0.0; n_px], vec![0.0; n_px]],
            month_days: 0,
            grid,
        })
    }

    pub fn grid(&self) -> &GridMeta {
        &self.grid
    }

    pub fn soil(&self) -> &SoilGeometry {
        &self.soil
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn is_finished(&self) -> bool {
        self.day >= self.land.config.days()
    }

    pub fn pixel_state(&self, p: usize) -> PixelState {
        let c = &self.columns[self.column_of[p]];
        let ns = self.soil.ns;
        let (hs_nh4, hs_no3) = c.mineral(0..ns);
        let (hi_nh4, hi_no3) = c.mineral(ns..ns + self.soil.ni);
        PixelState {
            hs_water: c.ws,
            hi_water: c.wi,
            gw_water: self.wg[p],
            hs_nh4,
            hs_no3,
            hi_nh4,
            hi_no3,
            gw_nh4: self.gnh4[p],
            gw_no3: self.gno3[p],
            organic: c.org,
        }
    }

    /// Landscape nitrogen stock (kg N).
    pub fn total_n(&self) -> f64 {
        let ha = self.grid.pixel_area_ha();
        let soil: f64 = self.columns.iter().map(|c| c.total_n() * c.n_px as f64).sum();
        let gw: f64 = self.gnh4.iter().zip(&self.gno3).map(|(a, b)| a + b).sum();
        (soil + gw) * ha
    }

    fn post_spinup(&self) -> bool {
        self.day >= self.land.config.spinup_years * 365
    }

    pub fn step_day(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::InvalidConfig("simulation already finished".into()));
        }
        if self.day == self.land.config.spinup_years * 365 {
            self.storage.push(self.total_n());
        }
        let record = self.post_spinup();
        let doy = self.day % 365;
        let precip = self.land.forcing.precip_mm[self.day] / 1000.0;
        let t_air = self.land.forcing.temp_c[self.day];
        for ci in 0..self.columns.len() {
            self.step_column(ci, doy, precip, t_air, record);
        }
        let (out_q, out_nh4, out_no3) = self.groundwater(record);

        let ha = self.grid.pixel_area_ha();
        let mut runoff = 0.0;
        let mut r_nh4 = 0.0;
        let mut r_no3 = 0.0;
        for c in &self.columns {
            runoff += c.runoff * c.n_px as f64;
            r_nh4 += c.runoff_nh4 * c.n_px as f64;
            r_no3 += c.runoff_no3 * c.n_px as f64;
        }
        let discharge = (runoff + out_q) * ha * 1e4;
        let nh4_load = (r_nh4 + out_nh4) * ha;
        let no3_load = (r_no3 + out_no3) * ha;
        let stock = self.total_n();
        if !stock.is_finite() || !discharge.is_finite() {
            return Err(Error::NonFiniteState { day: self.day, what: "nitrogen stock or discharge".into() });
        }
        if record {
            let conc = |load: f64| if discharge > 0.0 { load / discharge * 1000.0 } else { 0.0 };
            let values = [discharge, conc(nh4_load), conc(no3_load), nh4_load, no3_load];
            for (series, v) in self.outflow.iter_mut().zip(values) {
                series.push(v);
            }
            self.storage.push(stock);
            self.month_days += 1;
            if doy == 364 || month_of_day(doy + 1) != month_of_day(doy) {
                self.flush_month();
            }
        }
        self.day += 1;
        Ok(())
    }

    fn step_column(&mut self, ci: usize, doy: usize, precip: f64, t_air: f64, record: bool) {
        let rates = &self.land.config.rates;
        let leach = self.land.config.leaching_factor;
        let soil = self.soil;
        let (ns, ni) = (soil.ns, soil.ni);
        let c = &mut self.columns[ci];
        let t = t_air + c.temp_offset;
        let ft = ((t - 20.0) / 10.0).exp2();

        let fert = application(&self.assignment, self.land.config.fertilizer_override, c.lu, doy);
        if fert > 0.0 {
            let [s_nh4, s_no3, s_org] = self.assignment.fertilizer.split();
            c.nh4[0] += fert * s_nh4;
            c.no3[0] += fert * s_no3;
            c.org += fert * s_org;
        }

        // water (m)
        let (direct, infil) = if c.lu == LandUse::FarmBuilding {
            (precip * rates.building_runoff, precip * (1.0 - rates.building_runoff))
        } else {
            (0.0, precip)
        };
        c.ws += infil;
        let excess = (c.ws - soil.hs_capacity).max(0.0);
        c.ws -= excess;
        c.runoff = direct + excess;
        let pet = rates.pet_per_degree * t.max(0.0) / 1000.0 * et_factor(c.lu);
        let aet = (pet * (c.ws / soil.hs_field_capacity).min(1.0)).min(c.ws);
        c.ws -= aet;
        let perc = (rates.percolation * (c.ws - soil.hs_field_capacity).max(0.0)).min(soil.hi_capacity - c.wi).max(0.0);
        c.ws -= perc;
        c.wi += perc;
        let drain = rates.drainage * (c.wi - soil.hi_field_capacity).max(0.0);
        c.wi -= drain;
        c.drain = drain;

        // transformations (kg N/ha)
        let mineralized = (rates.mineralization * ft).min(1.0) * c.org;
        c.org -= mineralized;
        for k in 0..ns {
            c.nh4[k] += mineralized / ns as f64;
        }
        let nh3 = rates.volatilization * c.nh4[0];
        c.nh4[0] -= nh3;
        let k_nit = (rates.nitrification * ft).min(1.0);
        let mut nitrified = 0.0;
        for k in 0..ns + ni {
            let x = k_nit * c.nh4[k];
            c.nh4[k] -= x;
            c.no3[k] += x * (1.0 - rates.gaseous_loss);
            nitrified += x;
        }
        let gas = nitrified * rates.gaseous_loss;
        let (avail_nh4, avail_no3) = c.mineral(0..ns);
        let avail = avail_nh4 + avail_no3;
        let mut up_nh4 = 0.0;
        let mut up_no3 = 0.0;
        if avail > 0.0 {
            let share = demand(c.lu, doy).min(rates.uptake_fraction * avail) / avail;
            for k in 0..ns {
                let (a, b) = (c.nh4[k] * share, c.no3[k] * share);
                c.nh4[k] -= a;
                c.no3[k] -= b;
                up_nh4 += a;
                up_no3 += b;
            }
        }

        // transport of dissolved N with water
        let r = rates.nh4_retardation;
        let fraction = |q: f64, v: f64, r: f64| if q > 0.0 { leach * q / (r * v + q) } else { 0.0 };
        let v_top = c.ws / ns as f64;
        c.runoff_nh4 = c.nh4[0] * fraction(c.runoff, v_top, r);
        c.runoff_no3 = c.no3[0] * fraction(c.runoff, v_top, 1.0);
        c.nh4[0] -= c.runoff_nh4;
        c.no3[0] -= c.runoff_no3;
        let (mv_nh4, mv_no3) = (&mut self.scratch_nh4, &mut self.scratch_no3);
        for k in 0..ns + ni {
            let (q, v) = if k < ns { (perc, c.ws / ns as f64) } else { (drain, c.wi / ni as f64) };
            mv_nh4[k] = c.nh4[k] * fraction(q, v, r);
            mv_no3[k] = c.no3[k] * fraction(q, v, 1.0);
        }
        for k in 0..ns + ni {
            c.nh4[k] -= mv_nh4[k];
            c.no3[k] -= mv_no3[k];
            if k + 1 < ns + ni {
                c.nh4[k + 1] += mv_nh4[k];
                c.no3[k + 1] += mv_no3[k];
            }
        }
        c.leach_nh4 = mv_nh4[ns + ni - 1];
        c.leach_no3 = mv_no3[ns + ni - 1];

        if record {
            let a = &mut c.acc;
            a[ACC_ET] += aet * 1000.0;
            a[ACC_NH3] += nh3;
            a[ACC_NOX] += gas * rates.nox_share;
            a[ACC_N2O] += gas * (1.0 - rates.nox_share);
            a[ACC_MIN] += mineralized;
            a[ACC_NIT] += nitrified;
            a[ACC_UP_NH4] += up_nh4;
            a[ACC_UP_NO3] += up_no3;
            a[ACC_LEACH] += c.leach_nh4 + c.leach_no3;
            let (hs_nh4, hs_no3) = (c.nh4[..ns].iter().sum::<f64>(), c.no3[..ns].iter().sum::<f64>());
            let (hi_nh4, hi_no3) = (c.nh4[ns..].iter().sum::<f64>(), c.no3[ns..].iter().sum::<f64>());
            a[ACC_HS_NH4] += hs_nh4;
            a[ACC_HS_NO3] += hs_no3;
            a[ACC_HI_NH4] += hi_nh4;
            a[ACC_HI_NO3] += hi_no3;
        }
    }

    /// Recharge, downslope sweep from the top row and saturation excess.
    /// Returns outlet water (m over one pixel) and N (kg/ha over one pixel).
    fn groundwater(&mut self, record: bool) -> (f64, f64, f64) {
        let rates = &self.land.config.rates;
        let leach = self.land.config.leaching_factor;
        let r = rates.nh4_retardation;
        let cap = self.soil.gw_capacity;
        let t0 = self.assignment.transmissivity * self.lateral_scale;
        let decay = self.assignment.decay_depth;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut out = (0.0, 0.0, 0.0);
        for y in 0..ny {
            for x in 0..nx {
                let p = y * nx + x;
                let c = &self.columns[self.column_of[p]];
                self.wg[p] += c.drain;
                self.gnh4[p] += c.leach_nh4;
                self.gno3[p] += c.leach_no3;
                let w = self.wg[p];
                if w > 0.0 {
                    let q = (t0 * (-(cap - w).max(0.0) / decay).exp()).min(w);
                    let f = leach * q / w;
                    let (m_nh4, m_no3) = (self.gnh4[p] * f / r, self.gno3[p] * f);
                    self.wg[p] -= q;
                    self.gnh4[p] -= m_nh4;
                    self.gno3[p] -= m_no3;
                    if y + 1 < ny {
                        self.wg[p + nx] += q;
                        self.gnh4[p + nx] += m_nh4;
                        self.gno3[p + nx] += m_no3;
                    } else {
                        out.0 += q;
                        out.1 += m_nh4;
                        out.2 += m_no3;
                    }
                    let w2 = self.wg[p];
                    let e = w2 - cap;
                    if e > 0.0 {
                        let f = leach * e / w2;
                        let (e_nh4, e_no3) = (self.gnh4[p] * f / r, self.gno3[p] * f);
                        self.wg[p] = cap;
                        self.gnh4[p] -= e_nh4;
                        self.gno3[p] -= e_no3;
                        out.0 += e;
                        out.1 += e_nh4;
                        out.2 += e_no3;
                    }
                }
                if record {
                    let w = self.wg[p];
                    self.gw_acc[0][p] += w;
                    if w > 1e-9 {
                        self.gw_acc[1][p] += self.gnh4[p] * 0.1 / w;
                        self.gw_acc[2][p] += self.gno3[p] * 0.1 / w;
                    }
                }
            }
        }
        out
    }

    fn flush_month(&mut self) {
        let days = self.month_days as f64;
        let porosity = self.land.config.rates.groundwater_porosity;
        let top = self.assignment.hs_depth + self.assignment.hi_depth + self.land.config.rates.groundwater_thickness;
        for (p, &ci) in self.column_of.iter().enumerate() {
            let a = &self.columns[ci].acc;
            let values = [
                a[ACC_ET],
                a[ACC_NH3],
                a[ACC_NOX],
                a[ACC_N2O],
                a[ACC_MIN],
                a[ACC_NIT],
                a[ACC_UP_NH4],
                a[ACC_UP_NO3],
                a[ACC_LEACH],
                a[ACC_HS_NH4] / days,
                a[ACC_HS_NO3] / days,
                a[ACC_HI_NH4] / days,
                a[ACC_HI_NO3] / days,
                top - self.gw_acc[0][p] / days / porosity,
                self.gw_acc[1][p] / days,
                self.gw_acc[2][p] / days,
            ];
            for (map, v) in self.maps.iter_mut().zip(values) {
                map.push(v);
            }
        }
        for c in &mut self.columns {
            c.acc = [0.0; N_ACC];
        }
        for acc in &mut self.gw_acc {
            acc.fill(0.0);
        }
        self.month_days = 0;
    }

    pub fn finish(mut self) -> Result<RunOutput> {
        while !self.is_finished() {
            self.step_day()?;
        }
        let cfg = &self.land.config;
        Ok(RunOutput {
            grid: self.grid,
            first_day: cfg.spinup_years * 365,
            first_month: cfg.spinup_years * 12,
            outflow: self.outflow,
            maps: self.maps,
            n_storage: self.storage,
        })
    }
}

/// Runs the full simulation and returns the post spin-up record.
pub fn simulate(assignment: &FactorAssignment, landscape: &Landscape) -> Result<RunOutput> {
    Simulation::new(assignment, landscape)?.finish()
}
