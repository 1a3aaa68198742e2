//! Clusters the outcome sensitivity profiles and tabulates the clusters.

use gsa_core::cluster::{kmeans, standardize, synthesize, Partition, SynthesisParams, SynthesisResult};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::analyze::{AnalysisIndex, ScalarRow, INDEX_JSON, PROFILES_JSON};
use super::Ctx;
use crate::store::{csv_line, fmt_f64};
use crate::{Context, Error, Result};

pub const SYNTHESIS_JSON: &str = "synthesis/synthesis.json";
/// Factors whose mean profile weight reaches this share are listed as dominant in a cluster.
const DOMINANT_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisDoc {
    /// Response ids (`outcome:aggregate`) in profile-row order.
    pub labels: Vec<String>,
    /// Profile columns: main index of each factor, then its interaction share.
    pub features: Vec<String>,
    /// Responses left out because they did not vary across runs.
    pub excluded: Vec<String>,
    pub result: SynthesisResult,
    /// K-means partition at the fixed table size.
    pub fixed: Partition,
}

pub fn table_path(m: usize) -> String {
    format!("synthesis/table2_m{m}.csv")
}

/// Each profile row sums to one: main indexes plus the interaction total split across factors.
pub fn profile_matrix(rows: &[&ScalarRow], n_factors: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), 2 * n_factors, |i, j| {
        let p = &rows[i].profile;
        if j < n_factors {
            p.msi[j]
        } else {
            p.interaction_share(j - n_factors)
        }
    })
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let index: AnalysisIndex = ctx.store.read_json(INDEX_JSON)?;
    let rows: Vec<ScalarRow> = ctx.store.read_json(PROFILES_JSON)?;
    let (used, dropped): (Vec<&ScalarRow>, Vec<&ScalarRow>) = rows.iter().partition(|r| !r.profile.degenerate);
    let nf = index.factors.len();
    let x = profile_matrix(&used, nf);
    let settings = &ctx.config.analysis;
    let seed = ctx.config.seeds.analysis;

    let result = synthesize(&x, &SynthesisParams { m_max: settings.m_max, seed, bootstrap: settings.bootstrap })
        .context(|| "outcome synthesis".into())?;
    let k = settings.table_clusters;
    if k > used.len() {
        return Err(Error::Config(format!("table_clusters = {k} exceeds the {} usable responses", used.len())));
    }
    let fixed = kmeans(&standardize(&x), k, seed).context(|| "fixed-size clustering".into())?;

    let labels: Vec<String> = used.iter().map(|r| r.id()).collect();
    let features: Vec<String> = index
        .factors
        .iter()
        .map(|f| format!("main_{f}"))
        .chain(index.factors.iter().map(|f| format!("int_{f}")))
        .collect();

    ctx.store.reset_dir("synthesis")?;
    ctx.store.write("synthesis/dendrogram.csv", result.dendrogram.to_csv())?;
    ctx.store.write("synthesis/table2.csv", cluster_table(&result.partition, &labels, &x, &index.factors))?;
    ctx.store.write(&table_path(k), cluster_table(&fixed, &labels, &x, &index.factors))?;

    let mut expl = csv_line(["m", "inertia_explained"]);
    for (i, v) in result.explained_by_m.iter().enumerate() {
        expl.push_str(&csv_line([(i + 1).to_string(), fmt_f64(*v)]));
    }
    ctx.store.write("synthesis/explained_by_m.csv", expl)?;

    let mut angles = csv_line(["plane", "feature_a", "feature_b", "degrees", "class"]);
    for a in &result.angles {
        angles.push_str(&csv_line([
            format!("pc{}-pc{}", a.plane.0 + 1, a.plane.1 + 1),
            features[a.a].clone(),
            features[a.b].clone(),
            fmt_f64(a.degrees),
            serde_json::to_value(a.class)?.as_str().unwrap_or_default().to_string(),
        ]));
    }
    ctx.store.write("synthesis/angles.csv", angles)?;

    log::info!("synthesize: {} responses, M = {}", labels.len(), result.m);
    let doc = SynthesisDoc { labels, features, excluded: dropped.iter().map(|r| r.id()).collect(), result, fixed };
    ctx.store.write_json(SYNTHESIS_JSON, &doc)?;
    Ok(())
}

/// One line per cluster: members, leading factors and the main/interaction split.
pub fn cluster_table(p: &Partition, labels: &[String], x: &DMatrix<f64>, factors: &[String]) -> String {
    let nf = factors.len();
    let mut s = csv_line(["cluster", "size", "outcomes", "dominant_factors", "main_share", "interaction_share"]);
    for c in 1..=p.m {
        let members = p.members(c);
        let n = members.len() as f64;
        let weight: Vec<f64> = (0..nf)
            .map(|f| members.iter().map(|&i| x[(i, f)] + x[(i, nf + f)]).sum::<f64>() / n)
            .collect();
        let mut order: Vec<usize> = (0..nf).collect();
        order.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]));
        let dominant: Vec<String> = order
            .iter()
            .enumerate()
            .take_while(|&(rank, &f)| rank == 0 || weight[f] >= DOMINANT_SHARE)
            .take(3)
            .map(|(_, &f)| format!("{}:{:.2}", factors[f], weight[f]))
            .collect();
        let main = members.iter().map(|&i| (0..nf).map(|f| x[(i, f)]).sum::<f64>()).sum::<f64>() / n;
        let inter = members.iter().map(|&i| (nf..2 * nf).map(|f| x[(i, f)]).sum::<f64>()).sum::<f64>() / n;
        s.push_str(&csv_line([
            c.to_string(),
            members.len().to_string(),
            members.iter().map(|&i| labels[i].as_str()).collect::<Vec<_>>().join(" "),
            dominant.join(" "),
            format!("{main:.4}"),
            format!("{inter:.4}"),
        ]));
    }
    s
}
