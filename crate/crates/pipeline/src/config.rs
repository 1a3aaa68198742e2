//! The single JSON document that drives a pipeline run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gsa_core::design::DesignParams;
use gsa_core::factors::{FactorTable, LevelValue};
use gsa_core::tensor::LandUse;
use landscape::{Landscape, LandscapeConfig, Outcome};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSettings {
    pub n_basic: usize,
    pub min_resolution: usize,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self { n_basic: 5, min_resolution: 5 }
    }
}

/// Seeds are required; nothing falls back to the clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub design: u64,
    pub analysis: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Principal components kept for multivariate sensitivity.
    pub n_keep: usize,
    /// Largest cluster count tried in the synthesis.
    pub m_max: usize,
    /// Clusters for the run-level time-series clustering.
    pub ts_clusters: usize,
    /// Cluster count of the fixed-size summary table.
    pub table_clusters: usize,
    /// Bootstrap resamples for synthesis cluster stability; 0 skips it.
    pub bootstrap: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { n_keep: 3, m_max: 8, ts_clusters: 3, table_clusters: 5, bootstrap: 200 }
    }
}

/// How an outcome tensor is reduced to one value per run before ANOVA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarAggregate {
    /// Time mean of the landscape aggregate.
    Full,
    /// Time mean over the pixels of one land use (map outcomes only).
    LandUse { land_use: LandUse },
    /// Landscape aggregate averaged over the listed calendar months (0 = January).
    Months { label: String, months: Vec<usize> },
}

impl ScalarAggregate {
    pub fn label(&self) -> String {
        match self {
            ScalarAggregate::Full => "full".into(),
            ScalarAggregate::LandUse { land_use } => land_use.name().into(),
            ScalarAggregate::Months { label, .. } => label.clone(),
        }
    }

    /// Fertilization season, March to May.
    pub fn spring() -> Self {
        ScalarAggregate::Months { label: "spring".into(), months: vec![2, 3, 4] }
    }
}

fn default_outcomes() -> Vec<Outcome> {
    Outcome::ANALYSIS_DEFAULT.to_vec()
}

fn default_aggregates() -> Vec<ScalarAggregate> {
    vec![
        ScalarAggregate::Full,
        ScalarAggregate::spring(),
        ScalarAggregate::LandUse { land_use: LandUse::Maize },
        ScalarAggregate::LandUse { land_use: LandUse::Wheat },
        ScalarAggregate::LandUse { land_use: LandUse::Unmanaged },
    ]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Replacement levels keyed by factor id; unlisted factors keep the built-in table.
    #[serde(default)]
    pub factor_levels: BTreeMap<String, [LevelValue; 3]>,
    #[serde(default)]
    pub design: DesignSettings,
    /// Landscape configuration file; the desk-scale landscape when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<PathBuf>,
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<Outcome>,
    #[serde(default = "default_aggregates")]
    pub aggregates: Vec<ScalarAggregate>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    pub seeds: Seeds,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub jobs: usize,
}

impl PipelineConfig {
    /// Defaults everywhere except the seeds.
    pub fn with_seeds(seeds: Seeds) -> Self {
        Self {
            factor_levels: BTreeMap::new(),
            design: DesignSettings::default(),
            landscape: None,
            outcomes: default_outcomes(),
            aggregates: default_aggregates(),
            analysis: AnalysisSettings::default(),
            seeds,
            output_dir: default_output(),
            jobs: 1,
        }
    }

    /// Parses and validates; a relative landscape path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (&cfg.landscape, path.parent()) {
            if p.is_relative() {
                cfg.landscape = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.factor_table()?;
        if self.outcomes.is_empty() || self.aggregates.is_empty() {
            return bad("outcomes and aggregates must be non-empty".into());
        }
        for (i, o) in self.outcomes.iter().enumerate() {
            if self.outcomes[..i].contains(o) {
                return bad(format!("outcome {o} listed twice"));
            }
        }
        for (i, a) in self.aggregates.iter().enumerate() {
            if self.aggregates[..i].iter().any(|b| b.label() == a.label()) {
                return bad(format!("aggregate label {} used twice", a.label()));
            }
            if let ScalarAggregate::Months { months, .. } = a {
                if months.is_empty() || months.iter().any(|&m| m > 11) {
                    return bad(format!("aggregate {} needs months within 0..=11", a.label()));
                }
            }
        }
        let s = &self.analysis;
        if s.n_keep == 0 || s.m_max < 2 || s.ts_clusters < 2 || s.table_clusters < 2 {
            return bad("n_keep >= 1 and cluster counts >= 2 required".into());
        }
        if s.bootstrap != 0 && s.bootstrap < 100 {
            return bad("bootstrap must be 0 or at least 100".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if let Some(p) = &self.landscape {
            if !p.exists() {
                return bad(format!("landscape config {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Built-in factor table with the configured level overrides.
    pub fn factor_table(&self) -> Result<FactorTable> {
        let mut table = FactorTable::landscape_default();
        for (id, levels) in &self.factor_levels {
            let spec = table
                .factors
                .iter_mut()
                .find(|f| &f.id == id)
                .ok_or_else(|| Error::Config(format!("unknown factor {id}")))?;
            spec.levels = levels.clone();
        }
        table.validate()?;
        Ok(table)
    }

    pub fn design_params(&self) -> Result<DesignParams> {
        let mut p = DesignParams::new(self.factor_table()?.len(), self.design.n_basic, self.design.min_resolution);
        p.seed = self.seeds.design;
        Ok(p)
    }

    pub fn landscape_config(&self) -> Result<LandscapeConfig> {
        match &self.landscape {
            Some(p) => Ok(LandscapeConfig::load(p)?),
            None => Ok(LandscapeConfig::desk()),
        }
    }

    pub fn build_landscape(&self) -> Result<Landscape> {
        Ok(Landscape::new(self.landscape_config()?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"seeds": {"design": 1, "analysis": 2}}"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(MINIMAL).unwrap();
        assert_eq!(cfg, PipelineConfig::with_seeds(Seeds { design: 1, analysis: 2 }));
        assert_eq!(cfg.outcomes.len(), 17);
        assert_eq!(cfg.design, DesignSettings { n_basic: 5, min_resolution: 5 });
        cfg.validate().unwrap();
    }

    #[test]
    fn seeds_are_mandatory() {
        assert!(serde_json::from_str::<PipelineConfig>("{}").is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"seeds": {"design": 1}}"#).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"seeds": {"design": 1, "analysis": 2}, "job": 3}"#;
        assert!(serde_json::from_str::<PipelineConfig>(text).is_err());
    }

    #[test]
    fn level_overrides_apply() {
        let text = r#"{"seeds": {"design": 1, "analysis": 2}, "factor_levels": {"C": [1.0, 4.0, 9.0]}}"#;
        let cfg: PipelineConfig = serde_json::from_str(text).unwrap();
        let t = cfg.factor_table().unwrap();
        assert_eq!(t.get("C").unwrap().levels[2], LevelValue::Number(9.0));
        let bad = r#"{"seeds": {"design": 1, "analysis": 2}, "factor_levels": {"Z": [1.0, 4.0, 9.0]}}"#;
        let cfg: PipelineConfig = serde_json::from_str(bad).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn aggregates_round_trip() {
        let json = serde_json::to_string(&default_aggregates()).unwrap();
        assert!(json.contains(r#"{"kind":"land_use","land_use":"maize"}"#));
        assert_eq!(serde_json::from_str::<Vec<ScalarAggregate>>(&json).unwrap(), default_aggregates());
    }

    #[test]
    fn missing_landscape_file_rejected() {
        let mut cfg = PipelineConfig::with_seeds(Seeds { design: 1, analysis: 2 });
        cfg.landscape = Some(PathBuf::from("/nonexistent/landscape.json"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
