//! Stage ordering, cache keys and the top-level run.

use std::fmt;
use std::str::FromStr;

use gsa_core::factors::FactorTable;
use landscape::Landscape;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::stages::{self, Ctx};
use crate::store::{content_key, Store};
use crate::{report, Error, Result};

/// Bumped whenever a stage's output format or the surrogate's physics change.
const FORMAT_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "/1");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Design,
    Simulate,
    Analyze,
    Synthesize,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Design, Stage::Simulate, Stage::Analyze, Stage::Synthesize, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Design => "design",
            Stage::Simulate => "simulate",
            Stage::Analyze => "analyze",
            Stage::Synthesize => "synthesize",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        Stage::ALL.iter().position(|&s| s == self).and_then(|i| i.checked_sub(1)).map(|i| Stage::ALL[i])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub first: Stage,
    pub last: Stage,
    /// Stages from this one on are recomputed even when their key matches.
    pub force_from: Option<Stage>,
}

impl RunOptions {
    pub fn all() -> Self {
        Self { first: Stage::Design, last: Stage::Report, force_from: None }
    }

    pub fn only(stage: Stage) -> Self {
        Self { first: stage, last: stage, force_from: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<(Stage, StageStatus)>,
    pub simulations_run: usize,
}

fn json(v: &impl Serialize) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(v)?)
}

/// Content keys of every stage, each folding in its upstream key.
fn stage_keys(config: &PipelineConfig, table: &FactorTable, land: &Landscape) -> Result<Vec<String>> {
    let design = content_key(&[
        ("version", FORMAT_VERSION.as_bytes()),
        ("factors", &json(table)?),
        ("design", &json(&config.design_params()?)?),
    ]);
    let simulate = content_key(&[
        ("design", design.as_bytes()),
        ("landscape", &json(&land.config)?),
        ("forcing", land.forcing.to_csv().as_bytes()),
        ("outcomes", &json(&config.outcomes)?),
    ]);
    let analyze = content_key(&[
        ("simulate", simulate.as_bytes()),
        ("aggregates", &json(&config.aggregates)?),
        ("analysis", &json(&config.analysis)?),
        ("seed", &config.seeds.analysis.to_le_bytes()),
    ]);
    let synthesize = content_key(&[("analyze", analyze.as_bytes())]);
    let report = content_key(&[("synthesize", synthesize.as_bytes())]);
    Ok(vec![design, simulate, analyze, synthesize, report])
}

/// Runs `options.first..=options.last` with caching; rayon work uses `config.jobs` threads.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    if options.first > options.last {
        return Err(Error::Config(format!("stage {} comes after {}", options.first, options.last)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(config, options))
}

fn run_stages(config: &PipelineConfig, options: &RunOptions) -> Result<RunSummary> {
    let table = config.factor_table()?;
    let landscape = config.build_landscape()?;
    let keys = stage_keys(config, &table, &landscape)?;
    let store = Store::new(&config.output_dir);
    std::fs::create_dir_all(store.root())?;
    let ctx = Ctx { config, store: store.clone(), table, landscape };

    if let Some(up) = options.first.upstream() {
        let want = &keys[up as usize];
        match store.stamp(up.name()) {
            None => return Err(Error::MissingArtifact(store.path(&format!(".cache/{up}.key")))),
            Some(k) if &k != want => {
                return Err(Error::Config(format!("{up} artifacts are stale for this configuration; rerun from {up}")))
            }
            Some(_) => {}
        }
    }

    let mut summary = RunSummary { stages: Vec::new(), simulations_run: 0 };
    for stage in Stage::ALL.into_iter().filter(|&s| s >= options.first && s <= options.last) {
        let key = &keys[stage as usize];
        let forced = options.force_from.is_some_and(|f| stage >= f);
        if !forced && store.stamp(stage.name()).as_ref() == Some(key) {
            log::info!("{stage}: cached");
            summary.stages.push((stage, StageStatus::Cached));
            continue;
        }
        store.clear_stamp(stage.name())?;
        log::info!("{stage}: running");
        match stage {
            Stage::Design => stages::design::run(&ctx)?,
            Stage::Simulate => summary.simulations_run += stages::simulate::run(&ctx)?,
            Stage::Analyze => stages::analyze::run(&ctx)?,
            Stage::Synthesize => stages::synthesize::run(&ctx)?,
            Stage::Report => {
                report::report(store.root())?;
            }
        }
        store.set_stamp(stage.name(), key)?;
        summary.stages.push((stage, StageStatus::Computed));
    }
    store.write_json("manifest.json", &store.inventory()?)?;
    store.write_json("run_summary.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order() {
        assert_eq!(Stage::Design.upstream(), None);
        assert_eq!(Stage::Report.upstream(), Some(Stage::Synthesize));
        assert_eq!("analyze".parse::<Stage>().unwrap(), Stage::Analyze);
        assert!("plot".parse::<Stage>().is_err());
        assert!(Stage::Simulate < Stage::Analyze);
    }
}
