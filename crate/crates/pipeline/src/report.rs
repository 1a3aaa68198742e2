//! Plot-ready CSV bundles built only from stored artifacts.

use std::path::Path;

use serde::Serialize;

use crate::stages::analyze::{
    outcome_json, series_csv, series_from_csv, AnalysisIndex, OutcomeAnalysis, PcaSummary, INDEX_JSON,
};
use crate::stages::synthesize::{SynthesisDoc, SYNTHESIS_JSON};
use crate::store::{csv_line, fmt_f64, Store};
use crate::Result;

/// Runs drawn individually in the spaghetti panel.
const SPAGHETTI: usize = 10;
const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Serialize)]
struct BundleIndex {
    files: Vec<String>,
}

/// Writes `report/` under `dir` and returns the relative paths written.
pub fn report(dir: &Path) -> Result<Vec<String>> {
    let store = Store::new(dir);
    let index: AnalysisIndex = store.read_json(INDEX_JSON)?;
    let synthesis: SynthesisDoc = store.read_json(SYNTHESIS_JSON)?;
    let mut files = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        store.write(&format!("report/{name}"), body)?;
        files.push(name);
        Ok(())
    };

    store.reset_dir("report")?;
    for name in &index.outcomes {
        let a: OutcomeAnalysis = store.read_json(&outcome_json(name))?;
        let (times, runs) = series_from_csv(&store.read_to_string(&series_csv(name))?)?;
        emit(format!("fig2a_{name}.csv"), quantile_panel(&times, &runs))?;
        if let Some(rc) = &a.run_clusters {
            let head = std::iter::once("time".to_string()).chain((1..=rc.kmeans.m).map(|c| format!("cluster_{c}")));
            let mut s = csv_line(head);
            for (i, t) in times.iter().enumerate() {
                s.push_str(&csv_line(std::iter::once(t.to_string()).chain(rc.kmeans_means.iter().map(|m| fmt_f64(m[i])))));
            }
            emit(format!("fig2b_{name}.csv"), s)?;
        }
        emit(format!("fig2c_{name}.csv"), dynamic_panel(&times, &a, &index.factors))?;
        if let Some(p) = &a.dynamic_pca {
            let rows: Vec<String> = times.iter().map(usize::to_string).collect();
            emit(format!("fig2def_{name}.csv"), loadings_panel("time", &rows, &[], p))?;
            emit(format!("fig2ghi_{name}.csv"), pc_si_panel(p, &index.factors))?;
        }
        if let Some(sp) = &a.spatial {
            let mut s = csv_line(["pixel", "x", "y", "land_use", "mean", "rsd", "rsd_flag", "argmax"]);
            for p in 0..sp.mean.len() {
                s.push_str(&csv_line([
                    p.to_string(),
                    fmt_f64(sp.x[p]),
                    fmt_f64(sp.y[p]),
                    sp.land_use[p].name().to_string(),
                    fmt_f64(sp.mean[p]),
                    fmt_f64(sp.rsd[p]),
                    sp.rsd_flag[p].to_string(),
                    sp.argmax[p].clone(),
                ]));
            }
            emit(format!("fig4abc_{name}.csv"), s)?;
            if let Some(p) = &sp.pca {
                let rows: Vec<String> = (0..sp.mean.len()).map(|i| i.to_string()).collect();
                let xy = [("x", &sp.x), ("y", &sp.y)];
                emit(format!("fig4def_{name}.csv"), loadings_panel("pixel", &rows, &xy, p))?;
            }
        }
    }

    emit("fig6b_dendrogram.csv".into(), synthesis.result.dendrogram.to_csv())?;
    emit("fig6cd_heatstrip.csv".into(), heatstrip(&synthesis))?;
    let r = &synthesis.result;
    for &((a, b), inertia) in &r.plane_inertia {
        let plane = format!("pc{}{}", a + 1, b + 1);
        let mut s = csv_line(["response_id", "cluster", "x", "y", "plane_inertia"]);
        for (i, label) in synthesis.labels.iter().enumerate() {
            s.push_str(&csv_line([
                label.clone(),
                r.partition.labels[i].to_string(),
                fmt_f64(r.outcome_coords[i][a]),
                fmt_f64(r.outcome_coords[i][b]),
                fmt_f64(inertia),
            ]));
        }
        emit(format!("fig7_outcomes_{plane}.csv"), s)?;
        let mut s = csv_line(["feature", "x", "y"]);
        for (f, arrow) in synthesis.features.iter().zip(&r.arrows) {
            s.push_str(&csv_line([f.clone(), fmt_f64(arrow[a]), fmt_f64(arrow[b])]));
        }
        emit(format!("fig7_arrows_{plane}.csv"), s)?;
    }

    files.sort();
    store.write_json("report/index.json", &BundleIndex { files: files.clone() })?;
    files.push("index.json".into());
    Ok(files)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn quantile_panel(times: &[usize], runs: &[Vec<f64>]) -> String {
    let picks: Vec<usize> = (0..SPAGHETTI.min(runs.len())).map(|k| k * runs.len() / SPAGHETTI.min(runs.len())).collect();
    let head = ["time", "q05", "q25", "q50", "q75", "q95"]
        .into_iter()
        .map(String::from)
        .chain(picks.iter().map(|r| format!("run_{r}")));
    let mut s = csv_line(head);
    for (i, t) in times.iter().enumerate() {
        let mut col: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        col.sort_by(f64::total_cmp);
        let row = std::iter::once(t.to_string())
            .chain(QUANTILES.iter().map(|&q| fmt_f64(quantile(&col, q))))
            .chain(picks.iter().map(|&r| fmt_f64(runs[r][i])));
        s.push_str(&csv_line(row));
    }
    s
}

fn dynamic_panel(times: &[usize], a: &OutcomeAnalysis, factors: &[String]) -> String {
    let head = std::iter::once("time".to_string())
        .chain(factors.iter().map(|f| format!("mSI_{f}")))
        .chain(factors.iter().map(|f| format!("tSI_{f}")))
        .chain(["I_tot".to_string(), "dominant".to_string()]);
    let mut s = csv_line(head);
    let d = &a.dynamic;
    for (i, t) in times.iter().enumerate() {
        let row = std::iter::once(t.to_string())
            .chain(d.msi[i].iter().map(|&v| fmt_f64(v)))
            .chain(d.tsi[i].iter().map(|&v| fmt_f64(v)))
            .chain([fmt_f64(d.i_tot[i]), d.dominant[i].clone()]);
        s.push_str(&csv_line(row));
    }
    s
}

fn loadings_panel(key: &str, rows: &[String], extra: &[(&str, &Vec<f64>)], p: &PcaSummary) -> String {
    let head = std::iter::once(key.to_string())
        .chain(extra.iter().map(|(n, _)| n.to_string()))
        .chain((1..=p.loadings.len()).map(|c| format!("pc{c}")));
    let mut s = csv_line(head);
    for (i, r) in rows.iter().enumerate() {
        let row = std::iter::once(r.clone())
            .chain(extra.iter().map(|(_, v)| fmt_f64(v[i])))
            .chain(p.loadings.iter().map(|l| fmt_f64(l[i])));
        s.push_str(&csv_line(row));
    }
    s
}

fn pc_si_panel(p: &PcaSummary, factors: &[String]) -> String {
    let mut s = csv_line(["pc", "inertia", "factor", "msi", "interaction", "tsi"]);
    for (c, prof) in p.profiles.iter().enumerate() {
        for (f, name) in factors.iter().enumerate() {
            s.push_str(&csv_line([
                (c + 1).to_string(),
                fmt_f64(p.inertia[c]),
                name.clone(),
                fmt_f64(prof.msi[f]),
                fmt_f64(prof.tsi[f] - prof.msi[f]),
                fmt_f64(prof.tsi[f]),
            ]));
        }
    }
    s
}

/// Leaves of a merge tree in left-to-right drawing order.
fn leaf_order(d: &gsa_core::cluster::Dendrogram) -> Vec<usize> {
    let n = d.n_leaves;
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + d.merges.len() - 1];
    while let Some(node) = stack.pop() {
        if node < n {
            order.push(node);
        } else {
            let m = &d.merges[node - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    order
}

fn heatstrip(doc: &SynthesisDoc) -> String {
    let r = &doc.result;
    let head = ["position", "response_id", "cluster"]
        .into_iter()
        .map(String::from)
        .chain(doc.features.iter().cloned());
    let mut s = csv_line(head);
    for (pos, i) in leaf_order(&r.dendrogram).into_iter().enumerate() {
        let row = [pos.to_string(), doc.labels[i].clone(), r.partition.labels[i].to_string()]
            .into_iter()
            .chain(r.profiles[i].iter().map(|&v| fmt_f64(v)));
        s.push_str(&csv_line(row));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsa_core::cluster::{Dendrogram, Merge};

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.05) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn leaves_follow_the_tree() {
        let d = Dendrogram {
            n_leaves: 3,
            merges: vec![
                Merge { left: 0, right: 2, height: 1.0, size: 2 },
                Merge { left: 1, right: 3, height: 2.0, size: 3 },
            ],
        };
        assert_eq!(leaf_order(&d), vec![1, 0, 2]);
    }

    #[test]
    fn empty_directory_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(crate::Error::MissingArtifact(_))));
    }
}
