//! Saturated ANOVA variance decomposition.
//!
//! On a three-level design of strength >= 4 (or a full factorial with fewer
//! factors) main effects and two-factor interactions are mutually orthogonal,
//! so their sums of squares can be read off level and cell means:
//!
//! ```text
//! SS_main(f)   = sum_l  n_l  (mean_l  - mean)^2
//! SS_int(f,g)  = sum_lm n_lm (mean_lm - mean)^2 - SS_main(f) - SS_main(g)
//! ```
//!
//! Indexes are these sums divided by the total sum of squares. On a saturated
//! design (runs - 1 = 2 * factors + 4 * pairs) they add up to one.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{empirical_strength, verify_strength, DesignMatrix};
use crate::error::{Error, Result};

/// Relative size below which a negative interaction sum of squares is silent rounding.
const CLAMP_WARN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub msi: Vec<f64>,
    /// Pairwise interaction indexes in `(f, g)`, `f < g` lexicographic order.
    pub isi: Vec<f64>,
    pub tsi: Vec<f64>,
    pub i_tot: f64,
    pub total_ss: f64,
    pub ss_main: Vec<f64>,
    pub ss_int: Vec<f64>,
    pub degenerate: bool,
}

impl SensitivityProfile {
    pub fn n_factors(&self) -> usize {
        self.msi.len()
    }

    pub fn isi_between(&self, f: usize, g: usize) -> f64 {
        let (a, b) = if f < g { (f, g) } else { (g, f) };
        self.isi[pair_index(self.n_factors(), a, b)]
    }

    /// Half of the summed pairwise interactions involving `f`; these shares add up to `i_tot`.
    pub fn interaction_share(&self, f: usize) -> f64 {
        0.5 * (self.tsi[f] - self.msi[f])
    }

    /// Factor with the largest total index, lowest index on ties; interactions
    /// win only when `i_tot` exceeds every total index.
    pub fn dominant(&self) -> Dominant {
        let mut best = 0;
        for f in 1..self.tsi.len() {
            if self.tsi[f] > self.tsi[best] {
                best = f;
            }
        }
        if self.i_tot > self.tsi[best] {
            Dominant::Interactions
        } else {
            Dominant::Factor(best)
        }
    }

    pub fn main_sum(&self) -> f64 {
        self.msi.iter().sum()
    }
}

/// Index of pair `(f, g)` with `f < g` among `n` factors.
pub fn pair_index(n: usize, f: usize, g: usize) -> usize {
    debug_assert!(f < g && g < n);
    f * (2 * n - f - 1) / 2 + (g - f - 1)
}

pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|f| (f + 1..n).map(move |g| (f, g))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dominant {
    Factor(usize),
    Interactions,
}

impl Dominant {
    pub fn label(&self, labels: &[String]) -> String {
        match self {
            Dominant::Factor(f) => labels[*f].clone(),
            Dominant::Interactions => "interactions".to_string(),
        }
    }
}

impl fmt::Display for Dominant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dominant::Factor(i) => write!(f, "factor#{i}"),
            Dominant::Interactions => f.write_str("interactions"),
        }
    }
}

/// Precomputed level and cell memberships for repeated fits on one design.
#[derive(Debug, Clone)]
pub struct AnovaPlan {
    n_runs: usize,
    n_factors: usize,
    labels: Vec<String>,
    levels: Vec<Vec<u8>>,
    level_counts: Vec<[usize; 3]>,
    cells: Vec<Vec<u8>>,
    cell_counts: Vec<[usize; 9]>,
}

impl AnovaPlan {
    /// Requires every projection on `min(4, n_factors)` columns to be balanced.
    pub fn new(design: &DesignMatrix) -> Result<Self> {
        let n_factors = design.n_factors();
        let required = n_factors.min(4);
        if !verify_strength(design, required).holds {
            return Err(Error::InsufficientStrength { required, found: empirical_strength(design) });
        }
        let n_runs = design.n_runs();
        let levels: Vec<Vec<u8>> = (0..n_factors).map(|f| design.column(f)).collect();
        let level_counts = levels
            .iter()
            .map(|col| {
                let mut c = [0usize; 3];
                col.iter().for_each(|&l| c[l as usize] += 1);
                c
            })
            .collect();
        let mut cells = Vec::new();
        let mut cell_counts = Vec::new();
        for (f, g) in pairs(n_factors) {
            let cell: Vec<u8> = levels[f].iter().zip(&levels[g]).map(|(&a, &b)| 3 * a + b).collect();
            let mut c = [0usize; 9];
            cell.iter().for_each(|&x| c[x as usize] += 1);
            cells.push(cell);
            cell_counts.push(c);
        }
        Ok(Self { n_runs, n_factors, labels: design.labels().to_vec(), levels, level_counts, cells, cell_counts })
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn fit(&self, response: &[f64]) -> Result<SensitivityProfile> {
        if response.len() != self.n_runs {
            return Err(Error::LengthMismatch { expected: self.n_runs, found: response.len() });
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidParameters("response contains non-finite values".into()));
        }
        let n = self.n_runs as f64;
        let mean = response.iter().sum::<f64>() / n;
        let dev: Vec<f64> = response.iter().map(|y| y - mean).collect();
        let total_ss: f64 = dev.iter().map(|d| d * d).sum();
        let scale = response.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let n_pairs = self.cells.len();
        if scale == 0.0 || total_ss <= n * (1e-12 * scale).powi(2) {
            return Ok(SensitivityProfile {
                msi: vec![0.0; self.n_factors],
                isi: vec![0.0; n_pairs],
                tsi: vec![0.0; self.n_factors],
                i_tot: 0.0,
                total_ss,
                ss_main: vec![0.0; self.n_factors],
                ss_int: vec![0.0; n_pairs],
                degenerate: true,
            });
        }

        let ss_main: Vec<f64> = self
            .levels
            .iter()
            .zip(&self.level_counts)
            .map(|(col, counts)| {
                let mut sums = [0.0f64; 3];
                for (&l, &d) in col.iter().zip(&dev) {
                    sums[l as usize] += d;
                }
                sums.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(s, &c)| s * s / c as f64).sum()
            })
            .collect();

        let mut ss_int = Vec::with_capacity(n_pairs);
        for (p, (f, g)) in pairs(self.n_factors).into_iter().enumerate() {
            let mut sums = [0.0f64; 9];
            for (&c, &d) in self.cells[p].iter().zip(&dev) {
                sums[c as usize] += d;
            }
            let cell_ss: f64 = sums
                .iter()
                .zip(&self.cell_counts[p])
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s * s / c as f64)
                .sum();
            let mut ss = cell_ss - ss_main[f] - ss_main[g];
            if ss < 0.0 {
                if -ss > CLAMP_WARN * total_ss {
                    log::warn!(
                        "negative interaction SS {ss:e} for {}:{} clamped to zero",
                        self.labels[f],
                        self.labels[g]
                    );
                }
                ss = 0.0;
            }
            ss_int.push(ss);
        }

        let msi: Vec<f64> = ss_main.iter().map(|s| (s / total_ss).max(0.0)).collect();
        let isi: Vec<f64> = ss_int.iter().map(|s| s / total_ss).collect();
        let mut tsi = msi.clone();
        for (p, (f, g)) in pairs(self.n_factors).into_iter().enumerate() {
            tsi[f] += isi[p];
            tsi[g] += isi[p];
        }
        let i_tot = isi.iter().sum();
        Ok(SensitivityProfile { msi, isi, tsi, i_tot, total_ss, ss_main, ss_int, degenerate: false })
    }
}

/// One-shot saturated ANOVA of a scalar response.
pub fn fit_saturated_anova(design: &DesignMatrix, response: &[f64]) -> Result<SensitivityProfile> {
    AnovaPlan::new(design)?.fit(response)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicSI {
    pub profiles: Vec<SensitivityProfile>,
}

/// Independent saturated ANOVA at every time step of a runs x time matrix.
pub fn dynamic_sa(plan: &AnovaPlan, series: &DMatrix<f64>) -> Result<DynamicSI> {
    if series.nrows() != plan.n_runs() {
        return Err(Error::LengthMismatch { expected: plan.n_runs(), found: series.nrows() });
    }
    let profiles = (0..series.ncols())
        .into_par_iter()
        .map(|t| plan.fit(series.column(t).as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DynamicSI { profiles })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialSI {
    pub profiles: Vec<SensitivityProfile>,
    /// Per factor, the total index at every pixel.
    pub tsi_maps: Vec<Vec<f64>>,
    pub argmax: Vec<Dominant>,
    pub mean: Vec<f64>,
    pub rsd: Vec<f64>,
    /// Pixels whose mean is too close to zero for a meaningful rsd (reported as 0).
    pub rsd_flag: Vec<bool>,
}

/// Per-pixel saturated ANOVA of a runs x pixels matrix on a common grid.
pub fn spatial_sa(plan: &AnovaPlan, maps: &DMatrix<f64>) -> Result<SpatialSI> {
    if maps.nrows() != plan.n_runs() {
        return Err(Error::LengthMismatch { expected: plan.n_runs(), found: maps.nrows() });
    }
    let n_pixels = maps.ncols();
    let n = maps.nrows() as f64;
    let profiles = (0..n_pixels)
        .into_par_iter()
        .map(|p| plan.fit(maps.column(p).as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let tsi_maps = (0..plan.n_factors()).map(|f| profiles.iter().map(|p| p.tsi[f]).collect()).collect();
    let argmax = profiles.iter().map(SensitivityProfile::dominant).collect();

    let mut mean = Vec::with_capacity(n_pixels);
    let mut sd = Vec::with_capacity(n_pixels);
    for p in 0..n_pixels {
        let col = maps.column(p);
        let m = col.sum() / n;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean.push(m);
        sd.push(var.sqrt());
    }
    let max_abs = mean.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let eps = 1e-12 * max_abs;
    let rsd_flag: Vec<bool> = mean.iter().map(|m| m.abs() <= eps).collect();
    let rsd = mean
        .iter()
        .zip(&sd)
        .zip(&rsd_flag)
        .map(|((m, s), &flag)| if flag { 0.0 } else { s / m.abs() })
        .collect();
    Ok(SpatialSI { profiles, tsi_maps, argmax, mean, rsd, rsd_flag })
}
