//! Principal components of multivariate outcomes and ANOVA on their scores.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anova::{AnovaPlan, SensitivityProfile};
use crate::error::{Error, Result};

/// Column-centred PCA. Loadings are `n_columns x n_components`, scores `n_runs x n_components`.
#[derive(Debug, Clone)]
pub struct PCModel {
    pub loadings: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    /// Fraction of total variance carried by each kept component.
    pub inertia: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub column_means: Vec<f64>,
}

impl PCModel {
    pub fn n_components(&self) -> usize {
        self.inertia.len()
    }

    /// Sample variance of each kept score column.
    pub fn score_variance(&self) -> Vec<f64> {
        let dof = (self.scores.nrows().max(2) - 1) as f64;
        self.singular_values.iter().map(|s| s * s / dof).collect()
    }
}

/// Centred SVD, components sorted by decreasing singular value.
///
/// Each component is signed so that its largest-magnitude loading is positive
/// (first such entry on ties), with scores flipped to match.
pub fn pca(data: &DMatrix<f64>, n_components: usize) -> Result<PCModel> {
    let (n, d) = data.shape();
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::InvalidParameters(format!(
            "n_components = {n_components} must lie in 1..={}",
            n.min(d)
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameters("data contains non-finite values".into()));
    }
    let column_means: Vec<f64> = data.column_iter().map(|c| c.sum() / n as f64).collect();
    let mut centred = data.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-column_means[j]);
    }
    let constant = (0..d).all(|j| {
        let scale = data.column(j).amax().max(f64::MIN_POSITIVE);
        centred.column(j).amax() <= 1e-12 * scale
    });
    if constant {
        return Err(Error::DegenerateData);
    }

    // Work on the tall orientation; V of a wide matrix is U of its transpose.
    let wide = d > n;
    let target = if wide { centred.transpose() } else { centred.clone() };
    let svd = target.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let total: f64 = sv.iter().map(|s| s * s).sum();

    let mut loadings = DMatrix::zeros(d, n_components);
    let mut singular_values = Vec::with_capacity(n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let mut col: Vec<f64> = if wide { u.column(k).iter().copied().collect() } else { v_t.row(k).iter().copied().collect() };
        let pivot = col.iter().enumerate().fold(0, |best, (j, x)| if x.abs() > col[best].abs() { j } else { best });
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        loadings.set_column(c, &nalgebra::DVector::from_vec(col));
        singular_values.push(sv[k]);
    }
    let scores = &centred * &loadings;
    let inertia = singular_values.iter().map(|s| s * s / total).collect();
    Ok(PCModel { loadings, scores, inertia, singular_values, column_means })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PCSensitivity {
    pub profiles: Vec<SensitivityProfile>,
    pub inertia: Vec<f64>,
    /// Per factor, `sum_c inertia_c * tSI_fc` over kept components, renormalized by kept inertia.
    pub gsi_total: Vec<f64>,
    pub gsi_main: Vec<f64>,
}

/// Saturated ANOVA on each of the first `n_keep` score columns.
pub fn pc_sensitivity(plan: &AnovaPlan, model: &PCModel, n_keep: usize) -> Result<PCSensitivity> {
    if model.scores.nrows() != plan.n_runs() {
        return Err(Error::LengthMismatch { expected: plan.n_runs(), found: model.scores.nrows() });
    }
    if n_keep == 0 || n_keep > model.n_components() {
        return Err(Error::InvalidParameters(format!(
            "n_keep = {n_keep} must lie in 1..={}",
            model.n_components()
        )));
    }
    let profiles = (0..n_keep)
        .into_par_iter()
        .map(|c| plan.fit(model.scores.column(c).as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let inertia = model.inertia[..n_keep].to_vec();
    let kept: f64 = inertia.iter().sum();
    let nf = plan.n_factors();
    let weighted = |pick: fn(&SensitivityProfile, usize) -> f64| -> Vec<f64> {
        (0..nf)
            .map(|f| profiles.iter().zip(&inertia).map(|(p, w)| w * pick(p, f)).sum::<f64>() / kept)
            .collect()
    };
    let gsi_total = weighted(|p, f| p.tsi[f]);
    let gsi_main = weighted(|p, f| p.msi[f]);
    Ok(PCSensitivity { profiles, inertia, gsi_total, gsi_main })
}
