//! Input factor definitions and the default eleven-factor table.
//!
//! Level codes 0/1/2 map to the listed levels in order.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Resolution,
    Physical,
    Management,
}

/// A physical level: either a number or a categorical label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelValue {
    Number(f64),
    Label(String),
}

impl LevelValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            LevelValue::Number(x) => Some(*x),
            LevelValue::Label(_) => None,
        }
    }
}

impl fmt::Display for LevelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelValue::Number(x) => write!(f, "{x}"),
            LevelValue::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub id: String,
    pub description: String,
    pub levels: [LevelValue; 3],
    pub unit: String,
    pub kind: FactorKind,
    /// When set, numeric levels are multipliers of this baseline (factor K: 0.8X, X, 1.2X).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_to: Option<f64>,
}

impl FactorSpec {
    fn numeric(id: &str, description: &str, levels: [f64; 3], unit: &str, kind: FactorKind) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            levels: levels.map(LevelValue::Number),
            unit: unit.to_string(),
            kind,
            relative_to: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in i + 1..3 {
                if self.levels[i] == self.levels[j] {
                    return Err(Error::InvalidParameters(format!(
                        "factor {} has repeated level {}",
                        self.id, self.levels[i]
                    )));
                }
            }
        }
        if self.levels.iter().any(|l| l.as_number().is_some_and(|x| !x.is_finite())) {
            return Err(Error::InvalidParameters(format!(
                "factor {} has a non-finite level",
                self.id
            )));
        }
        Ok(())
    }

    pub fn level(&self, code: u8) -> &LevelValue {
        &self.levels[code as usize]
    }

    /// Physical value as text, with relative levels scaled by their baseline.
    pub fn physical(&self, code: u8) -> String {
        match (self.level(code), self.relative_to) {
            (LevelValue::Number(x), Some(base)) => format!("{}", x * base),
            (l, _) => l.to_string(),
        }
    }
}

/// An ordered set of factors with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub factors: Vec<FactorSpec>,
}

impl FactorTable {
    pub fn new(factors: Vec<FactorSpec>) -> Result<Self> {
        let table = Self { factors };
        table.validate()?;
        Ok(table)
    }

    /// The eleven factors A-K of the landscape experiment.
    pub fn landscape_default() -> Self {
        use FactorKind::*;
        let mut factors = vec![
            FactorSpec::numeric("A", "Mesh width (horizontal resolution)", [12.5, 25.0, 50.0], "m", Resolution),
            FactorSpec::numeric("B", "Soil depth (vertical resolution)", [0.02, 0.05, 0.1], "m", Resolution),
            FactorSpec::numeric("C", "Lateral transmissivity of soil", [2.0, 8.0, 15.0], "m2/day", Physical),
            FactorSpec::numeric("D", "Depth of exponential decrease in transmissivity", [0.001, 0.01, 0.1], "m", Physical),
            FactorSpec::numeric("E", "Surface layer (HS) depth", [0.2, 0.3, 0.4], "m", Physical),
            FactorSpec::numeric("F", "Total porosity of surface layer threshold", [0.12, 0.24, 0.48], "-", Physical),
            FactorSpec::numeric("G", "Ratio of microporosity to macroporosity", [0.5, 1.0, 1.2], "-", Physical),
            FactorSpec::numeric("H", "Intermediate layer (HI) depth", [0.6, 0.9, 1.2], "m", Physical),
            FactorSpec::numeric("I", "Ratio of microporosity HI / HS", [1.0, 0.75, 0.5], "-", Physical),
        ];
        factors.push(FactorSpec {
            id: "J".into(),
            description: "Type of nitrogen fertilization".into(),
            levels: ["OL", "OF", "INO"].map(|s| LevelValue::Label(s.to_string())),
            unit: "-".into(),
            kind: Management,
            relative_to: None,
        });
        factors.push(FactorSpec {
            id: "K".into(),
            description: "Amount of nitrogen in fertilization".into(),
            levels: [0.8, 1.0, 1.2].map(LevelValue::Number),
            unit: "kg(Nr)/ha".into(),
            kind: Management,
            relative_to: Some(180.0),
        });
        Self { factors }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.factors.iter().enumerate() {
            f.validate()?;
            if self.factors[..i].iter().any(|g| g.id == f.id) {
                return Err(Error::InvalidParameters(format!("duplicate factor id {}", f.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&FactorSpec> {
        self.factors.iter().find(|f| f.id == id)
    }
}

/// Default single-letter labels for `n` factors (A, B, ..., Z, then F26, F27, ...).
pub fn default_labels(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < 26 {
                char::from(b'A' + i as u8).to_string()
            } else {
                format!("F{i}")
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_valid() {
        let t = FactorTable::landscape_default();
        t.validate().unwrap();
        assert_eq!(t.ids().concat(), "ABCDEFGHIJK");
        assert_eq!(t.get("K").unwrap().physical(0), "144");
        assert_eq!(t.get("K").unwrap().physical(2), "216");
        assert_eq!(t.get("J").unwrap().physical(2), "INO");
        assert_eq!(t.get("I").unwrap().physical(0), "1");
    }

    #[test]
    fn repeated_level_rejected() {
        let mut t = FactorTable::landscape_default();
        t.factors[2].levels[1] = LevelValue::Number(2.0);
        assert!(t.validate().is_err());
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut t = FactorTable::landscape_default();
        t.factors[3].id = "A".into();
        assert!(matches!(t.validate(), Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn levels_round_trip_through_json() {
        let t = FactorTable::landscape_default();
        let s = serde_json::to_string(&t).unwrap();
        let back: FactorTable = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }
}
