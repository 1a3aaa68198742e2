//! Per-outcome sensitivity analysis of the simulated tensors.

use gsa_core::anova::{dynamic_sa, pairs, spatial_sa, AnovaPlan, SensitivityProfile};
use gsa_core::cluster::{chi_square_association, cut, kmeans, standardize, ward, AssociationTest, Method, Partition};
use gsa_core::mvsa::{pc_sensitivity, pca};
use gsa_core::tensor::{
    design_checksum, full_aggregate, read_tensor, spatial_aggregate, temporal_aggregate, AggregationMode,
    AggregationSpec, LandUse, Mask, OutcomeTensor, TimeAxis,
};
use landscape::Outcome;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{tensor_path, Ctx};
use crate::config::ScalarAggregate;
use crate::store::{csv_line, fmt_f64};
use crate::{Context, Error, Result};

pub const INDEX_JSON: &str = "analysis/index.json";
pub const PROFILES_JSON: &str = "analysis/profiles.json";

pub fn outcome_json(name: &str) -> String {
    format!("analysis/outcomes/{name}.json")
}

pub fn series_csv(name: &str) -> String {
    format!("analysis/series/{name}.csv")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisIndex {
    pub factors: Vec<String>,
    pub outcomes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicSummary {
    /// Indexed `[time][factor]`.
    pub msi: Vec<Vec<f64>>,
    pub tsi: Vec<Vec<f64>>,
    pub i_tot: Vec<f64>,
    pub dominant: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaSummary {
    pub inertia: Vec<f64>,
    /// Indexed `[component][column]`.
    pub loadings: Vec<Vec<f64>>,
    pub profiles: Vec<SensitivityProfile>,
    pub gsi_total: Vec<f64>,
    pub gsi_main: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorAssociation {
    pub method: Method,
    pub factor: String,
    pub test: AssociationTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunClusters {
    pub kmeans: Partition,
    pub ward: Partition,
    /// Mean raw series of each k-means cluster, `[cluster][time]`.
    pub kmeans_means: Vec<Vec<f64>>,
    pub associations: Vec<FactorAssociation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialSummary {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub land_use: Vec<LandUse>,
    pub mean: Vec<f64>,
    pub rsd: Vec<f64>,
    pub rsd_flag: Vec<bool>,
    pub argmax: Vec<String>,
    /// Indexed `[factor][pixel]`.
    pub tsi_maps: Vec<Vec<f64>>,
    pub pca: Option<PcaSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeAnalysis {
    pub outcome: Outcome,
    pub unit: String,
    pub time_axis: TimeAxis,
    pub dynamic: DynamicSummary,
    pub dynamic_pca: Option<PcaSummary>,
    pub run_clusters: Option<RunClusters>,
    pub spatial: Option<SpatialSummary>,
}

/// Sensitivity of one scalar reduction of one outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarRow {
    pub outcome: Outcome,
    pub aggregate: String,
    pub profile: SensitivityProfile,
}

impl ScalarRow {
    pub fn id(&self) -> String {
        format!("{}:{}", self.outcome.name(), self.aggregate)
    }
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let design = ctx.load_design()?;
    let checksum = design_checksum(&design);
    let plan = AnovaPlan::new(&design)?;
    let labels = plan.labels().to_vec();
    ctx.store.reset_dir("analysis")?;

    let mut rows = Vec::new();
    for &o in &ctx.config.outcomes {
        let name = o.name();
        let t = read_tensor(&ctx.store.path(&tensor_path(o)), Some(&checksum))
            .and_then(|t| t.for_design(&design))
            .context(|| format!("tensor {name}"))?;
        let series = spatial_aggregate(&t, &AggregationSpec::new(AggregationMode::SpatialMean))?;
        let (analysis, dynamic) = analyze_outcome(ctx, &plan, &design, o, &t, &series)?;

        ctx.store.write(&series_csv(name), series_to_csv(&series, &t.time_axis))?;
        ctx.store.write(&format!("analysis/dynamic/{name}.csv"), dynamic_csv(&t.time_axis, &dynamic, &labels))?;
        if let Some(sp) = &analysis.spatial {
            ctx.store.write(&format!("analysis/spatial/{name}.csv"), spatial_csv(sp, &labels))?;
        }
        ctx.store.write_json(&outcome_json(name), &analysis)?;

        for agg in &ctx.config.aggregates {
            let Some(values) = scalar_values(&t, &series, agg)? else { continue };
            let profile = plan.fit(&values).context(|| format!("{name} {}", agg.label()))?;
            rows.push(ScalarRow { outcome: o, aggregate: agg.label(), profile });
        }
        log::info!("analyze: {name}");
    }

    let mut csv = csv_line(["response_id", "factor_or_pair", "index", "value"]);
    for row in &rows {
        csv.push_str(&profile_long(&row.id(), &row.profile, &labels));
    }
    ctx.store.write("analysis/aggregated_si.csv", csv)?;
    ctx.store.write("analysis/window_shift.csv", window_shift_csv(&rows, &ctx.config.aggregates, &labels))?;
    ctx.store.write_json(PROFILES_JSON, &rows)?;
    ctx.store.write_json(
        INDEX_JSON,
        &AnalysisIndex { factors: labels, outcomes: ctx.config.outcomes.iter().map(|o| o.name().to_string()).collect() },
    )?;
    Ok(())
}

fn analyze_outcome(
    ctx: &Ctx,
    plan: &AnovaPlan,
    design: &gsa_core::design::DesignMatrix,
    o: Outcome,
    t: &OutcomeTensor,
    series: &DMatrix<f64>,
) -> Result<(OutcomeAnalysis, Vec<SensitivityProfile>)> {
    let name = o.name();
    let settings = &ctx.config.analysis;
    let labels = plan.labels();
    let dyn_si = dynamic_sa(plan, series).context(|| format!("{name} dynamic"))?;
    let dynamic = DynamicSummary {
        msi: dyn_si.profiles.iter().map(|p| p.msi.clone()).collect(),
        tsi: dyn_si.profiles.iter().map(|p| p.tsi.clone()).collect(),
        i_tot: dyn_si.profiles.iter().map(|p| p.i_tot).collect(),
        dominant: dyn_si.profiles.iter().map(|p| p.dominant().label(labels)).collect(),
    };
    let dynamic_pca = pca_summary(plan, series, settings.n_keep).context(|| format!("{name} PCA"))?;
    let run_clusters = run_clusters(ctx, design, series).context(|| format!("{name} run clustering"))?;

    let spatial = match &t.grid {
        None => None,
        Some(grid) => {
            let maps = temporal_aggregate(t, &AggregationSpec::new(AggregationMode::TemporalMean))?;
            let si = spatial_sa(plan, &maps).context(|| format!("{name} spatial"))?;
            let (x, y) = (0..grid.n_pixels()).map(|p| grid.centre(p)).unzip();
            Some(SpatialSummary {
                x,
                y,
                land_use: grid.land_use.clone(),
                mean: si.mean,
                rsd: si.rsd,
                rsd_flag: si.rsd_flag,
                argmax: si.argmax.iter().map(|d| d.label(labels)).collect(),
                tsi_maps: si.tsi_maps,
                pca: pca_summary(plan, &maps, settings.n_keep).context(|| format!("{name} spatial PCA"))?,
            })
        }
    };
    let analysis =
        OutcomeAnalysis { outcome: o, unit: t.unit.clone(), time_axis: t.time_axis, dynamic, dynamic_pca, run_clusters, spatial };
    Ok((analysis, dyn_si.profiles))
}

/// `None` when the data carry no variance to decompose.
fn pca_summary(plan: &AnovaPlan, data: &DMatrix<f64>, n_keep: usize) -> gsa_core::Result<Option<PcaSummary>> {
    let k = n_keep.min(data.nrows()).min(data.ncols());
    let model = match pca(data, k) {
        Ok(m) => m,
        Err(gsa_core::Error::DegenerateData) => return Ok(None),
        Err(e) => return Err(e),
    };
    let sens = pc_sensitivity(plan, &model, k)?;
    Ok(Some(PcaSummary {
        inertia: sens.inertia,
        loadings: model.loadings.column_iter().map(|c| c.iter().copied().collect()).collect(),
        profiles: sens.profiles,
        gsi_total: sens.gsi_total,
        gsi_main: sens.gsi_main,
    }))
}

fn run_clusters(
    ctx: &Ctx,
    design: &gsa_core::design::DesignMatrix,
    series: &DMatrix<f64>,
) -> gsa_core::Result<Option<RunClusters>> {
    let z = standardize(series);
    if z.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let m = ctx.config.analysis.ts_clusters;
    let km = kmeans(&z, m, ctx.config.seeds.analysis)?;
    let wd = cut(&ward(&z)?, m)?;
    let kmeans_means = (1..=km.m)
        .map(|c| {
            let members = km.members(c);
            (0..series.ncols())
                .map(|s| members.iter().map(|&r| series[(r, s)]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    let mut associations = Vec::new();
    for p in [&km, &wd] {
        for (f, label) in design.labels().iter().enumerate() {
            match chi_square_association(p, &design.column(f)) {
                Ok(test) => associations.push(FactorAssociation { method: p.method, factor: label.clone(), test }),
                Err(gsa_core::Error::DegenerateTable(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Some(RunClusters { kmeans: km, ward: wd, kmeans_means, associations }))
}

/// One value per run, or `None` when the reduction does not apply to this outcome.
fn scalar_values(t: &OutcomeTensor, series: &DMatrix<f64>, agg: &ScalarAggregate) -> Result<Option<Vec<f64>>> {
    let time_mean = |m: &DMatrix<f64>, cols: &[usize]| -> Vec<f64> {
        (0..m.nrows()).map(|r| cols.iter().map(|&c| m[(r, c)]).sum::<f64>() / cols.len() as f64).collect()
    };
    match agg {
        ScalarAggregate::Full => Ok(Some(full_aggregate(t))),
        ScalarAggregate::Months { label, months } => {
            let cols: Vec<usize> = (0..t.n_time()).filter(|&i| months.contains(&t.time_axis.month_of(i))).collect();
            if cols.is_empty() {
                return Err(Error::Config(format!("aggregate {label} selects no time steps of {}", t.name)));
            }
            Ok(Some(time_mean(series, &cols)))
        }
        ScalarAggregate::LandUse { land_use } => {
            if t.grid.is_none() {
                return Ok(None);
            }
            let spec = AggregationSpec::masked(AggregationMode::LanduseMean, Mask::LandUse(*land_use));
            match spatial_aggregate(t, &spec) {
                Ok(m) => Ok(Some(time_mean(&m, &(0..m.ncols()).collect::<Vec<_>>()))),
                Err(gsa_core::Error::EmptyMask) => {
                    log::warn!("no {} pixels; skipping {} for {}", land_use.name(), agg.label(), t.name);
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Long-format rows `id,factor_or_pair,index,value` for one profile.
pub fn profile_long(id: &str, p: &SensitivityProfile, labels: &[String]) -> String {
    let mut s = String::new();
    for (f, l) in labels.iter().enumerate() {
        s.push_str(&csv_line([id, l, "mSI", &fmt_f64(p.msi[f])]));
        s.push_str(&csv_line([id, l, "tSI", &fmt_f64(p.tsi[f])]));
    }
    for (k, (f, g)) in pairs(labels.len()).into_iter().enumerate() {
        s.push_str(&csv_line([id, &format!("{}:{}", labels[f], labels[g]), "iSI", &fmt_f64(p.isi[k])]));
    }
    s.push_str(&csv_line([id, "all", "I_tot", &fmt_f64(p.i_tot)]));
    s
}

fn series_to_csv(series: &DMatrix<f64>, axis: &TimeAxis) -> String {
    let mut s = csv_line(std::iter::once("run".to_string()).chain(axis.labels().map(|l| l.to_string())));
    for r in 0..series.nrows() {
        s.push_str(&csv_line(std::iter::once(r.to_string()).chain(series.row(r).iter().map(|&v| fmt_f64(v)))));
    }
    s
}

pub fn series_from_csv(text: &str) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let bad = || Error::Config("malformed series CSV".into());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(bad)?;
    let times = header.split(',').skip(1).map(|t| t.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
    let runs = lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().map_err(|_| bad())).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((times, runs))
}

fn dynamic_csv(axis: &TimeAxis, profiles: &[SensitivityProfile], labels: &[String]) -> String {
    let mut s = csv_line(["time", "factor_or_pair", "index", "value"]);
    for (time, p) in axis.labels().zip(profiles) {
        s.push_str(&profile_long(&time.to_string(), p, labels));
    }
    s
}

fn spatial_csv(sp: &SpatialSummary, labels: &[String]) -> String {
    let mut head = vec!["pixel", "x", "y", "land_use", "mean", "rsd", "rsd_flag", "argmax"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    head.extend(labels.iter().map(|l| format!("tSI_{l}")));
    let mut s = csv_line(head);
    for p in 0..sp.mean.len() {
        let mut row = vec![
            p.to_string(),
            fmt_f64(sp.x[p]),
            fmt_f64(sp.y[p]),
            sp.land_use[p].name().to_string(),
            fmt_f64(sp.mean[p]),
            fmt_f64(sp.rsd[p]),
            sp.rsd_flag[p].to_string(),
            sp.argmax[p].clone(),
        ];
        row.extend(sp.tsi_maps.iter().map(|m| fmt_f64(m[p])));
        s.push_str(&csv_line(row));
    }
    s
}

/// Dominant factor of the full reduction against each month window, per outcome.
fn window_shift_csv(rows: &[ScalarRow], aggregates: &[ScalarAggregate], labels: &[String]) -> String {
    let mut s = csv_line(["outcome", "window", "full_dominant", "window_dominant", "shifted"]);
    let windows: Vec<String> = aggregates
        .iter()
        .filter(|a| matches!(a, ScalarAggregate::Months { .. }))
        .map(ScalarAggregate::label)
        .collect();
    for full in rows.iter().filter(|r| r.aggregate == "full") {
        for w in &windows {
            let Some(win) = rows.iter().find(|r| r.outcome == full.outcome && &r.aggregate == w) else { continue };
            let (a, b) = (full.profile.dominant(), win.profile.dominant());
            s.push_str(&csv_line([
                full.outcome.name().to_string(),
                w.clone(),
                a.label(labels),
                b.label(labels),
                (a != b).to_string(),
            ]));
        }
    }
    s
}
