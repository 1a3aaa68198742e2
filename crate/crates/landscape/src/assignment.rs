use std::fmt;
use std::str::FromStr;

use gsa_core::factors::{FactorTable, LevelValue};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fertilizer form. The split of applied nitrogen into NH4, NO3 and organic N
/// differs by type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FertilizerType {
    /// Organic liquid manure.
    #[serde(rename = "OL")]
    OrganicLiquid,
    /// Organic solid fertilizer.
    #[serde(rename = "OF")]
    OrganicSolid,
    /// Inorganic mineral fertilizer.
    #[serde(rename = "INO")]
    Inorganic,
}

impl FertilizerType {
    /// Fractions (NH4, NO3, organic), summing to 1.
    pub fn split(self) -> [f64; 3] {
        match self {
            FertilizerType::OrganicLiquid => [0.6, 0.0, 0.4],
            FertilizerType::OrganicSolid => [0.2, 0.0, 0.8],
            FertilizerType::Inorganic => [0.3, 0.7, 0.0],
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            FertilizerType::OrganicLiquid => "OL",
            FertilizerType::OrganicSolid => "OF",
            FertilizerType::Inorganic => "INO",
        }
    }
}

impl FromStr for FertilizerType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OL" => Ok(FertilizerType::OrganicLiquid),
            "OF" => Ok(FertilizerType::OrganicSolid),
            "INO" => Ok(FertilizerType::Inorganic),
            other => Err(Error::InvalidAssignment(format!("unknown fertilizer type {other:?}"))),
        }
    }
}

impl fmt::Display for FertilizerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Physical values of the eleven factors for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAssignment {
    /// A: mesh width (m).
    pub mesh_width: f64,
    /// B: soil sublayer thickness (m).
    pub layer_thickness: f64,
    /// C: lateral transmissivity at saturation (m2/day).
    pub transmissivity: f64,
    /// D: e-folding depth of transmissivity (m).
    pub decay_depth: f64,
    /// E: HS depth (m).
    pub hs_depth: f64,
    /// F: HS total porosity.
    pub porosity: f64,
    /// G: micro/macro porosity ratio.
    pub micro_macro: f64,
    /// H: HI depth (m).
    pub hi_depth: f64,
    /// I: HI/HS microporosity ratio.
    pub micro_ratio: f64,
    /// J
    pub fertilizer: FertilizerType,
    /// K: annual amount (kg N/ha), landscape average.
    pub amount: f64,
}

const IDS: [&str; 11] = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K"];

fn numeric(table: &FactorTable, id: &str, code: u8) -> Result<f64> {
    let spec = table
        .get(id)
        .ok_or_else(|| Error::InvalidAssignment(format!("factor table has no factor {id}")))?;
    match spec.level(code) {
        LevelValue::Number(x) => Ok(x * spec.relative_to.unwrap_or(1.0)),
        LevelValue::Label(l) => Err(Error::InvalidAssignment(format!("factor {id} level {l:?} is not numeric"))),
    }
}

impl FactorAssignment {
    /// Builds the assignment for one design row, with codes in `A..K` order.
    pub fn from_codes(table: &FactorTable, codes: &[u8]) -> Result<Self> {
        if codes.len() != IDS.len() {
            return Err(Error::InvalidAssignment(format!("expected 11 level codes, got {}", codes.len())));
        }
        if let Some(c) = codes.iter().find(|&&c| c > 2) {
            return Err(Error::InvalidAssignment(format!("level code {c} out of range")));
        }
        let n = |i: usize| numeric(table, IDS[i], codes[i]);
        let fertilizer = match table.get("J").map(|s| s.level(codes[9])) {
            Some(LevelValue::Label(l)) => l.parse()?,
            _ => return Err(Error::InvalidAssignment("factor J must have fertilizer labels".into())),
        };
        Ok(Self {
            mesh_width: n(0)?,
            layer_thickness: n(1)?,
            transmissivity: n(2)?,
            decay_depth: n(3)?,
            hs_depth: n(4)?,
            porosity: n(5)?,
            micro_macro: n(6)?,
            hi_depth: n(7)?,
            micro_ratio: n(8)?,
            fertilizer,
            amount: n(10)?,
        })
    }

    /// Every factor at its middle level.
    pub fn middle(table: &FactorTable) -> Result<Self> {
        Self::from_codes(table, &[1; 11])
    }

    fn numeric_values(&self) -> [f64; 10] {
        [
            self.mesh_width,
            self.layer_thickness,
            self.transmissivity,
            self.decay_depth,
            self.hs_depth,
            self.porosity,
            self.micro_macro,
            self.hi_depth,
            self.micro_ratio,
            self.amount,
        ]
    }

    /// Checks that every value is one of the table's levels for its factor.
    pub fn validate(&self, table: &FactorTable) -> Result<()> {
        let values = self.numeric_values();
        for (k, id) in IDS.iter().enumerate() {
            if *id == "J" {
                let ok = table
                    .get("J")
                    .is_some_and(|s| s.levels.iter().any(|l| *l == LevelValue::Label(self.fertilizer.code().into())));
                if !ok {
                    return Err(Error::InvalidAssignment(format!("fertilizer {} is not a level of J", self.fertilizer)));
                }
                continue;
            }
            let v = values[if k < 9 { k } else { 9 }];
            let ok = (0..3).any(|c| numeric(table, id, c).is_ok_and(|x| (x - v).abs() <= 1e-9 * x.abs().max(1.0)));
            if !ok {
                return Err(Error::InvalidAssignment(format!("{v} is not a level of factor {id}")));
            }
        }
        Ok(())
    }

    pub(crate) fn check_physical(&self) -> Result<()> {
        let v = self.numeric_values();
        if v.iter().any(|x| !x.is_finite()) || v[..9].iter().any(|&x| x <= 0.0) || self.amount < 0.0 {
            return Err(Error::InvalidAssignment(format!("non-physical values {self:?}")));
        }
        if self.porosity >= 1.0 {
            return Err(Error::InvalidAssignment("porosity must be below 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn middle_levels() {
        let t = FactorTable::landscape_default();
        let a = FactorAssignment::middle(&t).unwrap();
        assert_eq!(a.mesh_width, 25.0);
        assert_eq!(a.fertilizer, FertilizerType::OrganicSolid);
        assert_eq!(a.amount, 180.0);
        a.validate(&t).unwrap();
    }

    #[test]
    fn off_level_value_rejected() {
        let t = FactorTable::landscape_default();
        let mut a = FactorAssignment::from_codes(&t, &[0, 2, 1, 0, 2, 1, 0, 2, 1, 2, 0]).unwrap();
        assert_eq!(a.amount, 144.0);
        assert_eq!(a.fertilizer, FertilizerType::Inorganic);
        a.validate(&t).unwrap();
        a.transmissivity = 9.0;
        assert!(a.validate(&t).is_err());
    }

    #[test]
    fn splits_sum_to_one() {
        for f in [FertilizerType::OrganicLiquid, FertilizerType::OrganicSolid, FertilizerType::Inorganic] {
            assert!((f.split().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert_eq!(f.code().parse::<FertilizerType>().unwrap(), f);
        }
    }
}
