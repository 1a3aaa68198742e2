//! Partitioning of rows: k-means, Ward linkage, agreement and association tests,
//! and the synthesis of sensitivity profiles.
//!
//! Cluster labels are `1..=M`, numbered by first appearance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::mvsa::pca;

const RESTARTS: u64 = 10;
const MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    WardCut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub m: usize,
    pub method: Method,
    /// Between-cluster over total sum of squares.
    pub inertia_explained: f64,
    pub seed: Option<u64>,
    /// Empty clusters reseeded during the winning k-means run.
    pub repairs: usize,
}

impl Partition {
    pub fn n_objects(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.m];
        self.labels.iter().for_each(|&l| s[l - 1] += 1);
        s
    }
}

/// Relabels arbitrary ids to `1..=M` by first appearance.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len() + 1;
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn total_ss(points: &[Vec<f64>]) -> f64 {
    let d = points.first().map_or(0, Vec::len);
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    points.iter().map(|p| sq_dist(p, &mean)).sum()
}

fn explained(within: f64, total: f64) -> f64 {
    if total > 0.0 {
        (1.0 - within / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn check_input(x: &DMatrix<f64>, m: usize) -> Result<()> {
    if m == 0 || m > x.nrows() {
        return Err(Error::InvalidParameters(format!("M = {m} must lie in 1..={}", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameters("data contains non-finite values".into()));
    }
    Ok(())
}

struct Fit {
    labels: Vec<usize>,
    centres: Vec<Vec<f64>>,
    within: f64,
    repairs: usize,
}

fn nearest(p: &[f64], centres: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = sq_dist(p, &centres[best]);
    for (k, c) in centres.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

fn within_ss(points: &[Vec<f64>], labels: &[usize], centres: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centres[l])).sum()
}

/// Lloyd iterations from the given centres until assignments stop changing.
fn lloyd(points: &[Vec<f64>], mut centres: Vec<Vec<f64>>) -> Fit {
    let m = centres.len();
    let d = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centres, None)).collect();
    let mut repairs = 0;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut counts = vec![0usize; m];
        let mut sums = vec![vec![0.0; d]; m];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            // Move the point farthest from its centre out of a cluster that can spare it.
            let donor = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centres[labels[a]])
                        .total_cmp(&sq_dist(&points[b], &centres[labels[b]]))
                        .then(b.cmp(&a))
                })
                .expect("M <= n leaves a donor");
            let from = labels[donor];
            counts[from] -= 1;
            sums[from].iter_mut().zip(&points[donor]).for_each(|(s, v)| *s -= v);
            counts[empty] = 1;
            sums[empty] = points[donor].clone();
            labels[donor] = empty;
            repairs += 1;
        }
        for k in 0..m {
            centres[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
        }
        let ss = within_ss(points, &labels, &centres);
        debug_assert!(ss <= last * (1.0 + 1e-9) + 1e-12, "within-cluster SS increased: {last} -> {ss}");
        last = ss;
        let next: Vec<usize> = points.iter().zip(&labels).map(|(p, &l)| nearest(p, &centres, Some(l))).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let within = within_ss(points, &labels, &centres);
    Fit { labels, centres, within, repairs }
}

fn kmeans_pp(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    centres
}

fn best_of_restarts(points: &[Vec<f64>], m: usize, seed: u64) -> Fit {
    (0..RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            lloyd(points, kmeans_pp(points, m, &mut rng))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(|best, f| if f.within < best.within { f } else { best })
        .expect("at least one restart")
}

fn to_partition(fit: Fit, m: usize, total: f64, seed: u64) -> Partition {
    let (labels, _) = canonical(&fit.labels);
    Partition {
        labels,
        m,
        method: Method::Kmeans,
        inertia_explained: explained(fit.within, total),
        seed: Some(seed),
        repairs: fit.repairs,
    }
}

/// Best of ten k-means++ / Lloyd restarts by within-cluster sum of squares.
pub fn kmeans(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<Partition> {
    check_input(x, m)?;
    let points = rows(x);
    let total = total_ss(&points);
    Ok(to_partition(best_of_restarts(&points, m, seed), m, total, seed))
}

/// k-means for `M = 1..=m_max`, each warm-started from the previous solution
/// plus its worst-fitted point, so explained inertia never decreases with `M`.
pub fn kmeans_sweep(x: &DMatrix<f64>, m_max: usize, seed: u64) -> Result<Vec<Partition>> {
    check_input(x, m_max)?;
    let points = rows(x);
    let total = total_ss(&points);
    let mut out = Vec::with_capacity(m_max);
    let mut prev: Option<Fit> = None;
    for m in 1..=m_max {
        let mut fit = best_of_restarts(&points, m, seed);
        if let Some(p) = &prev {
            let far = (0..points.len())
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &p.centres[p.labels[a]])
                        .total_cmp(&sq_dist(&points[b], &p.centres[p.labels[b]]))
                        .then(b.cmp(&a))
                })
                .unwrap();
            let mut centres = p.centres.clone();
            centres.push(points[far].clone());
            let warm = lloyd(&points, centres);
            if warm.within < fit.within {
                fit = warm;
            }
        }
        let labels = fit.labels.clone();
        let centres = fit.centres.clone();
        let (within, repairs) = (fit.within, fit.repairs);
        out.push(to_partition(Fit { labels: labels.clone(), centres: centres.clone(), within, repairs }, m, total, seed));
        prev = Some(Fit { labels, centres, within, repairs });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: leaves are `0..n`, the cluster formed by merge `k` is `n + k`.
    pub left: usize,
    pub right: usize,
    /// Increase in within-cluster sum of squares; two points merge at half their squared distance.
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,left,right,height,size\n");
        for (k, m) in self.merges.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", k + 1, m.left, m.right, m.height, m.size));
        }
        s
    }
}

/// Ward linkage by Lance-Williams updates on squared Euclidean distances.
pub fn ward(x: &DMatrix<f64>) -> Result<Dendrogram> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidParameters("Ward linkage needs at least two objects".into()));
    }
    check_input(x, 1)?;
    let points = rows(x);
    // dist holds twice the Ward merge cost, which for singletons is the squared distance.
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&points[i], &points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                if dist[i][j] < best.0 {
                    best = (dist[i][j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for &h in &active {
            if h == i || h == j {
                continue;
            }
            let nh = size[h] as f64;
            let d = ((ni + nh) * dist[h][i] + (nj + nh) * dist[h][j] - nh * dij) / (ni + nj + nh);
            dist[h][i] = d;
            dist[i][h] = d;
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        size[i] += size[j];
        merges.push(Merge { left: a, right: b, height: dij / 2.0, size: size[i] });
        id[i] = n + k;
        active.retain(|&h| h != j);
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// The `M`-cluster partition obtained by stopping after `n - M` merges.
pub fn cut(dendrogram: &Dendrogram, m: usize) -> Result<Partition> {
    let n = dendrogram.n_leaves;
    if m == 0 || m > n {
        return Err(Error::InvalidParameters(format!("M = {m} must lie in 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for (k, mg) in dendrogram.merges.iter().take(n - m).enumerate() {
        let (a, b) = (find(&mut parent, mg.left), find(&mut parent, mg.right));
        parent[a] = n + k;
        parent[b] = n + k;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let (labels, found) = canonical(&roots);
    debug_assert_eq!(found, m);
    let total: f64 = dendrogram.merges.iter().map(|g| g.height).sum();
    let within: f64 = dendrogram.merges.iter().take(n - m).map(|g| g.height).sum();
    Ok(Partition {
        labels,
        m,
        method: Method::WardCut,
        inertia_explained: explained(within, total),
        seed: None,
        repairs: 0,
    })
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let (ra, ma) = canonical(a);
    let (rb, mb) = canonical(b);
    let mut t = vec![vec![0usize; mb]; ma];
    for (&x, &y) in ra.iter().zip(&rb) {
        t[x - 1][y - 1] += 1;
    }
    let rs = t.iter().map(|r| r.iter().sum()).collect();
    let cs = (0..mb).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    (t, rs, cs)
}

/// Adjusted Rand index on raw label vectors.
pub fn adjusted_rand_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ObjectMismatch(a.len(), b.len()));
    }
    let (t, rs, cs) = contingency(a, b);
    let one_to_one = t.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
        && (0..cs.len()).all(|j| t.iter().filter(|r| r[j] > 0).count() == 1);
    if one_to_one {
        return Ok(1.0);
    }
    let c2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = t.iter().flatten().map(|&x| c2(x)).sum();
    let sa: f64 = rs.iter().map(|&x| c2(x)).sum();
    let sb: f64 = cs.iter().map(|&x| c2(x)).sum();
    let expected = sa * sb / c2(a.len());
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(0.0);
    }
    Ok((index - expected) / (max - expected))
}

pub fn adjusted_rand(p1: &Partition, p2: &Partition) -> Result<f64> {
    adjusted_rand_labels(&p1.labels, &p2.labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub m: usize,
    /// False when the curve never bends downward; `m` is then the smallest count.
    pub has_elbow: bool,
}

/// `explained[i]` is the explained inertia with `i + 1` clusters; picks the
/// most negative second difference.
pub fn elbow(explained: &[f64]) -> Result<Elbow> {
    if explained.len() < 3 {
        return Err(Error::TooFewPoints(explained.len()));
    }
    let scale = explained.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut best: Option<(f64, usize)> = None;
    for i in 1..explained.len() - 1 {
        let d2 = explained[i + 1] - 2.0 * explained[i] + explained[i - 1];
        if d2 < -1e-12 * scale && best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, i));
        }
    }
    Ok(match best {
        Some((_, i)) => Elbow { m: i + 1, has_elbow: true },
        None => Elbow { m: 1, has_elbow: false },
    })
}

/// Smallest `M` in `2..=m_max` at which k-means and the Ward cut agree exactly;
/// `None` when they never do.
pub fn minimal_agreement_m(x: &DMatrix<f64>, m_max: usize, seed: u64) -> Result<Option<usize>> {
    if m_max < 2 || m_max > x.nrows() {
        return Err(Error::InvalidParameters(format!("M_max = {m_max} must lie in 2..={}", x.nrows())));
    }
    let tree = ward(x)?;
    for m in 2..=m_max {
        let km = kmeans(x, m, seed)?;
        if adjusted_rand(&km, &cut(&tree, m)?)? == 1.0 {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationTest {
    /// Clusters x observed levels.
    pub table: Vec<Vec<usize>>,
    pub levels: Vec<u8>,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    /// Some expected count is below 5.
    pub low_expected_flag: bool,
}

/// Pearson chi-square test of independence between clusters and factor levels.
pub fn chi_square_association(partition: &Partition, factor_column: &[u8]) -> Result<AssociationTest> {
    let n = partition.n_objects();
    if factor_column.len() != n {
        return Err(Error::ObjectMismatch(n, factor_column.len()));
    }
    let mut levels: Vec<u8> = factor_column.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if partition.m < 2 {
        return Err(Error::DegenerateTable("single cluster".into()));
    }
    if levels.len() < 2 {
        return Err(Error::DegenerateTable("single factor level".into()));
    }
    let mut table = vec![vec![0usize; levels.len()]; partition.m];
    for (&c, l) in partition.labels.iter().zip(factor_column) {
        table[c - 1][levels.binary_search(l).unwrap()] += 1;
    }
    let rs: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cs: Vec<f64> = (0..levels.len()).map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let mut chi2 = 0.0;
    let mut low = false;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rs[i] * cs[j] / n as f64;
            low |= e < 5.0;
            if e > 0.0 {
                chi2 += (o as f64 - e).powi(2) / e;
            }
        }
    }
    let df = (partition.m - 1) * (levels.len() - 1);
    let p_value = if chi2 > 0.0 { gamma_ur(df as f64 / 2.0, chi2 / 2.0) } else { 1.0 };
    Ok(AssociationTest { table, levels, chi2, df, p_value, low_expected_flag: low })
}

/// Fraction of `b` bootstrap resamples in which each k-means cluster reappears
/// (best Jaccard match at least 0.75 among the resampled objects).
pub fn bootstrap_stability(x: &DMatrix<f64>, m: usize, b: usize, seed: u64) -> Result<Vec<f64>> {
    if b < 100 {
        return Err(Error::InvalidParameters(format!("bootstrap needs at least 100 resamples, got {b}")));
    }
    let base = kmeans(x, m, seed)?;
    let n = x.nrows();
    let hits = (0..b as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<bool>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
            rng.set_stream(r);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = DMatrix::from_fn(n, x.ncols(), |i, j| x[(idx[i], j)]);
            let part = kmeans(&sample, m, seed.wrapping_add(r + 1))?;
            let mut label_of = vec![0usize; n];
            let mut present = vec![false; n];
            for (i, &o) in idx.iter().enumerate() {
                label_of[o] = part.labels[i];
                present[o] = true;
            }
            Ok((1..=m)
                .map(|c| {
                    let orig: Vec<usize> = (0..n).filter(|&o| present[o] && base.labels[o] == c).collect();
                    if orig.is_empty() {
                        return None;
                    }
                    let best = (1..=m)
                        .map(|k| {
                            let inter = orig.iter().filter(|&&o| label_of[o] == k).count();
                            let newsize = (0..n).filter(|&o| present[o] && label_of[o] == k).count();
                            inter as f64 / (orig.len() + newsize - inter) as f64
                        })
                        .fold(0.0, f64::max);
                    Some(best >= 0.75)
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..m)
        .map(|c| {
            let valid: Vec<bool> = hits.iter().filter_map(|h| h[c]).collect();
            if valid.is_empty() {
                0.0
            } else {
                valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleClass {
    Parallel,
    Orthogonal,
    Antiparallel,
    Unclassified,
}

impl AngleClass {
    pub fn of(degrees: f64) -> Self {
        if degrees < 30.0 {
            AngleClass::Parallel
        } else if degrees > 150.0 {
            AngleClass::Antiparallel
        } else if (60.0..=120.0).contains(&degrees) {
            AngleClass::Orthogonal
        } else {
            AngleClass::Unclassified
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrowAngle {
    pub plane: (usize, usize),
    pub a: usize,
    pub b: usize,
    pub degrees: f64,
    pub class: AngleClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub m_max: usize,
    pub seed: u64,
    /// Bootstrap resamples for cluster stability; 0 skips it.
    pub bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub profiles: Vec<Vec<f64>>,
    pub m: usize,
    /// Set when k-means and Ward never agreed and `m` came from the elbow.
    pub m_from_elbow: bool,
    pub partition: Partition,
    pub explained_by_m: Vec<f64>,
    pub dendrogram: Dendrogram,
    pub stability: Option<Vec<f64>>,
    pub pc_inertia: Vec<f64>,
    /// Inertia of the planes (PC1,PC2), (PC1,PC3), (PC2,PC3).
    pub plane_inertia: Vec<((usize, usize), f64)>,
    /// Per outcome, coordinates on the kept components.
    pub outcome_coords: Vec<Vec<f64>>,
    /// Per feature, correlation with each kept component.
    pub arrows: Vec<Vec<f64>>,
    pub angles: Vec<ArrowAngle>,
}

/// Column-standardize (sample sd); constant columns become zero.
pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
        let scale = mean.abs().max(col.amax());
        if sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            col.fill(0.0);
        } else {
            col /= sd;
        }
    }
    z
}

/// Clusters outcomes by their sensitivity profiles and projects factor arrows.
pub fn synthesize(profiles: &DMatrix<f64>, params: &SynthesisParams) -> Result<SynthesisResult> {
    let (n, d) = profiles.shape();
    if n < 3 {
        return Err(Error::InvalidParameters(format!("synthesis needs at least 3 outcomes, got {n}")));
    }
    for (i, row) in profiles.row_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameters(format!("profile {i} sums to {}, not 1", row.sum())));
        }
    }
    let z = standardize(profiles);
    if z.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData);
    }
    let m_max = params.m_max.clamp(2, n);
    let sweep = kmeans_sweep(&z, m_max, params.seed)?;
    let explained_by_m: Vec<f64> = sweep.iter().map(|p| p.inertia_explained).collect();
    let (m, m_from_elbow) = match minimal_agreement_m(&z, m_max, params.seed)? {
        Some(m) => (m, false),
        None => (elbow(&explained_by_m).map(|e| e.m.max(2)).unwrap_or(2), true),
    };
    let partition = kmeans(&z, m, params.seed)?;
    let dendrogram = ward(&z)?;
    let stability = match params.bootstrap {
        0 => None,
        b => Some(bootstrap_stability(&z, m, b, params.seed)?),
    };

    let k = 3.min(n).min(d);
    let model = pca(&z, k)?;
    let sdev: Vec<f64> = model.score_variance().iter().map(|v| v.sqrt()).collect();
    let arrows: Vec<Vec<f64>> = (0..d).map(|j| (0..k).map(|c| model.loadings[(j, c)] * sdev[c]).collect()).collect();
    let outcome_coords = model.scores.row_iter().map(|r| r.iter().copied().collect()).collect();
    let planes: Vec<(usize, usize)> = [(0, 1), (0, 2), (1, 2)].into_iter().filter(|&(_, b)| b < k).collect();
    let plane_inertia = planes.iter().map(|&(a, b)| ((a, b), model.inertia[a] + model.inertia[b])).collect();
    let mut angles = Vec::new();
    for &(pa, pb) in &planes {
        let len = |v: &Vec<f64>| (v[pa] * v[pa] + v[pb] * v[pb]).sqrt();
        for a in 0..d {
            for b in a + 1..d {
                let (la, lb) = (len(&arrows[a]), len(&arrows[b]));
                if la <= 1e-12 || lb <= 1e-12 {
                    continue;
                }
                let cos = (arrows[a][pa] * arrows[b][pa] + arrows[a][pb] * arrows[b][pb]) / (la * lb);
                let degrees = cos.clamp(-1.0, 1.0).acos().to_degrees();
                angles.push(ArrowAngle { plane: (pa, pb), a, b, degrees, class: AngleClass::of(degrees) });
            }
        }
    }
    Ok(SynthesisResult {
        profiles: profiles.row_iter().map(|r| r.iter().copied().collect()).collect(),
        m,
        m_from_elbow,
        partition,
        explained_by_m,
        dendrogram,
        stability,
        pc_inertia: model.inertia.clone(),
        plane_inertia,
        outcome_coords,
        arrows,
        angles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Blobs of `per` points around centres `sep` apart, with unit spread.
    fn blobs(k: usize, per: usize, sep: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = k * per;
        let truth: Vec<usize> = (0..n).map(|i| i / per + 1).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let c = (i / per) as f64;
            let centre = if j == 0 { sep * c } else { sep * (c * c % 3.0) };
            centre + noise.sample(&mut rng)
        });
        (x, truth)
    }

    #[test]
    fn kmeans_recovers_planted_blobs() {
        let (x, truth) = blobs(3, 20, 10.0, 1);
        let p = kmeans(&x, 3, 42).unwrap();
        assert_eq!(adjusted_rand_labels(&p.labels, &truth).unwrap(), 1.0);
        assert!(p.sizes().iter().all(|&s| s == 20));
    }

    #[test]
    fn ward_cut_recovers_planted_blobs() {
        let (x, truth) = blobs(3, 15, 10.0, 2);
        let tree = ward(&x).unwrap();
        let p = cut(&tree, 3).unwrap();
        assert_eq!(adjusted_rand_labels(&p.labels, &truth).unwrap(), 1.0);
        assert!(tree.merges.windows(2).all(|w| w[0].height <= w[1].height * (1.0 + 1e-12)));
    }

    #[test]
    fn m_equal_n_explains_everything() {
        let (x, _) = blobs(2, 4, 3.0, 3);
        assert!((kmeans(&x, 8, 0).unwrap().inertia_explained - 1.0).abs() < 1e-12);
        assert!((cut(&ward(&x).unwrap(), 8).unwrap().inertia_explained - 1.0).abs() < 1e-12);
        assert_eq!(cut(&ward(&x).unwrap(), 1).unwrap().inertia_explained, 0.0);
    }

    #[test]
    fn duplicates_share_labels() {
        let (x, _) = blobs(3, 5, 4.0, 4);
        let mut rows_ = rows(&x);
        rows_.extend(rows(&x));
        let dup = DMatrix::from_fn(30, 2, |i, j| rows_[i][j]);
        let p = kmeans(&dup, 3, 9).unwrap();
        assert_eq!(p.labels[..15], p.labels[15..]);
    }

    #[test]
    fn two_points_merge_at_half_squared_distance() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        let tree = ward(&x).unwrap();
        assert_eq!(tree.merges, vec![Merge { left: 0, right: 1, height: 12.5, size: 2 }]);
    }

    #[test]
    fn ward_heights_sum_to_total_ss() {
        let (x, _) = blobs(4, 6, 2.0, 5);
        let total: f64 = ward(&x).unwrap().merges.iter().map(|m| m.height).sum();
        assert!((total - total_ss(&rows(&x))).abs() < 1e-9 * total);
    }

    #[test]
    fn ari_reference_values() {
        let a = [1, 1, 2, 2, 3, 3];
        assert_eq!(adjusted_rand_labels(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_labels(&a, &[7, 7, 5, 5, 9, 9]).unwrap(), 1.0);
        let ones = [1; 6];
        let singletons = [1, 2, 3, 4, 5, 6];
        assert!(adjusted_rand_labels(&ones, &singletons).unwrap() <= 0.0);
        // direct formula: table [[2,0],[1,1],[0,2]]
        let b = [1, 1, 1, 2, 2, 2];
        let (index, sa, sb) = (1.0 + 1.0, 3.0, 6.0);
        let e = sa * sb / 15.0;
        let expected = (index - e) / ((sa + sb) / 2.0 - e);
        assert!((adjusted_rand_labels(&a, &b).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(adjusted_rand_labels(&a, &b[..5]), Err(Error::ObjectMismatch(6, 5))));
    }

    #[test]
    fn elbow_examples() {
        assert_eq!(elbow(&[0.2, 0.7, 0.74, 0.76, 0.77]).unwrap(), Elbow { m: 2, has_elbow: true });
        assert_eq!(elbow(&[0.1, 0.2, 0.3, 0.4]).unwrap(), Elbow { m: 1, has_elbow: false });
        assert!(matches!(elbow(&[0.1, 0.2]), Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn agreement_on_planted_clusters() {
        // Both methods recover all five planted clusters, so they agree by M = 5 at the latest;
        // the returned M is the first count at which the two partitions coincide.
        let (x, truth) = blobs(5, 8, 12.0, 6);
        let km = kmeans(&x, 5, 3).unwrap();
        let wc = cut(&ward(&x).unwrap(), 5).unwrap();
        assert_eq!(adjusted_rand_labels(&km.labels, &truth).unwrap(), 1.0);
        assert_eq!(adjusted_rand_labels(&wc.labels, &truth).unwrap(), 1.0);
        let m = minimal_agreement_m(&x, 8, 3).unwrap().unwrap();
        assert!((2..=5).contains(&m));
        let tree = ward(&x).unwrap();
        assert_eq!(adjusted_rand(&kmeans(&x, m, 3).unwrap(), &cut(&tree, m).unwrap()).unwrap(), 1.0);
        for earlier in 2..m {
            assert!(adjusted_rand(&kmeans(&x, earlier, 3).unwrap(), &cut(&tree, earlier).unwrap()).unwrap() < 1.0);
        }

        // two groups of identical points
        let two = DMatrix::from_fn(10, 3, |i, j| if i < 5 { j as f64 } else { 10.0 + j as f64 });
        assert_eq!(minimal_agreement_m(&two, 4, 3).unwrap(), Some(2));
    }

    #[test]
    fn agreement_on_noise_never_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(40, 3, |_, _| rng.random::<f64>());
        let r = minimal_agreement_m(&x, 6, 1).unwrap();
        assert!(r.is_none_or(|m| (2..=6).contains(&m)));
    }

    fn partition_of(labels: Vec<usize>) -> Partition {
        let (labels, m) = canonical(&labels);
        Partition { labels, m, method: Method::Kmeans, inertia_explained: 0.0, seed: None, repairs: 0 }
    }

    #[test]
    fn chi_square_reference_tables() {
        let uniform: Vec<usize> = (0..60).map(|i| i / 30 + 1).collect();
        let levels: Vec<u8> = (0..60).map(|i| (i % 3) as u8).collect();
        let t = chi_square_association(&partition_of(uniform), &levels).unwrap();
        assert_eq!(t.table, vec![vec![10, 10, 10], vec![10, 10, 10]]);
        assert_eq!((t.chi2, t.p_value, t.df), (0.0, 1.0, 2));

        let lv: Vec<u8> = (0..243).map(|i| (i % 3) as u8).collect();
        let perfect = partition_of(lv.iter().map(|&l| l as usize).collect());
        let t = chi_square_association(&perfect, &lv).unwrap();
        assert!((t.chi2 - 486.0).abs() < 1e-9);
        assert!(t.p_value < 1e-100);
        assert!(!t.low_expected_flag);
    }

    #[test]
    fn chi_square_p_value_matches_closed_form() {
        // df = 2: survival function is exp(-x/2)
        let labels = vec![1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 1, 2];
        let levels = vec![0, 0, 1, 2, 1, 1, 2, 2, 0, 1, 2, 0];
        let t = chi_square_association(&partition_of(labels), &levels).unwrap();
        assert!((t.p_value - (-t.chi2 / 2.0).exp()).abs() < 1e-12);
        assert!(t.low_expected_flag);
    }

    #[test]
    fn chi_square_degenerate_tables() {
        let one = partition_of(vec![1; 6]);
        assert!(matches!(chi_square_association(&one, &[0, 1, 2, 0, 1, 2]), Err(Error::DegenerateTable(_))));
        let two = partition_of(vec![1, 2, 1, 2]);
        assert!(matches!(chi_square_association(&two, &[1, 1, 1, 1]), Err(Error::DegenerateTable(_))));
    }

    #[test]
    fn bootstrap_separated_vs_single_cluster() {
        let (x, _) = blobs(3, 12, 15.0, 7);
        let s = bootstrap_stability(&x, 3, 100, 5).unwrap();
        assert!(s.iter().all(|&v| v > 0.95), "{s:?}");

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let blob = DMatrix::from_fn(36, 2, |_, _| noise.sample(&mut rng));
        let s = bootstrap_stability(&blob, 3, 100, 5).unwrap();
        assert!(s.iter().sum::<f64>() / 3.0 < 0.8, "{s:?}");

        assert!(bootstrap_stability(&x, 3, 0, 5).is_err());
    }

    #[test]
    fn angle_classes() {
        assert_eq!(AngleClass::of(10.0), AngleClass::Parallel);
        assert_eq!(AngleClass::of(95.0), AngleClass::Orthogonal);
        assert_eq!(AngleClass::of(170.0), AngleClass::Antiparallel);
        assert_eq!(AngleClass::of(45.0), AngleClass::Unclassified);
    }

    #[test]
    fn synthesis_of_two_pure_groups() {
        // 4 features; outcomes 0..3 driven by feature 0, outcomes 3..6 by feature 1
        let profiles = DMatrix::from_fn(6, 4, |i, j| if (i < 3 && j == 0) || (i >= 3 && j == 1) { 1.0 } else { 0.0 });
        let params = SynthesisParams { m_max: 4, seed: 1, bootstrap: 0 };
        let r = synthesize(&profiles, &params).unwrap();
        assert_eq!(r.m, 2);
        assert!(!r.m_from_elbow);
        assert_eq!(r.partition.labels, vec![1, 1, 1, 2, 2, 2]);
        assert!((r.pc_inertia[0] - 1.0).abs() < 1e-10);
        let a = &r.arrows;
        assert!(a[0][0] * a[1][0] < 0.0);
        let pair = r.angles.iter().find(|x| x.plane == (0, 1) && x.a == 0 && x.b == 1).unwrap();
        assert_eq!(pair.class, AngleClass::Antiparallel);
        assert_eq!(synthesize(&profiles, &params).unwrap(), r);
    }

    #[test]
    fn identical_profiles_are_degenerate() {
        let profiles = DMatrix::from_fn(5, 4, |_, j| if j == 2 { 1.0 } else { 0.0 });
        let params = SynthesisParams { m_max: 3, seed: 1, bootstrap: 0 };
        assert!(matches!(synthesize(&profiles, &params), Err(Error::DegenerateData)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ari_symmetric_and_bounded(a in prop::collection::vec(1usize..4, 8), b in prop::collection::vec(1usize..5, 8)) {
            let x = adjusted_rand_labels(&a, &b).unwrap();
            let y = adjusted_rand_labels(&b, &a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&x));
        }

        #[test]
        fn sweep_explained_is_monotone(seed in any::<u64>(), n in 6usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
            let sweep = kmeans_sweep(&x, 5, seed).unwrap();
            for w in sweep.windows(2) {
                prop_assert!(w[1].inertia_explained >= w[0].inertia_explained - 1e-12);
            }
            for p in &sweep {
                prop_assert!(p.sizes().iter().all(|&s| s > 0));
            }
        }

        #[test]
        fn ward_monotone(seed in any::<u64>(), n in 2usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
            let tree = ward(&x).unwrap();
            prop_assert!(tree.merges.windows(2).all(|w| w[0].height <= w[1].height * (1.0 + 1e-9) + 1e-15));
            for m in 1..=n {
                let p = cut(&tree, m).unwrap();
                prop_assert_eq!(p.sizes().len(), m);
                prop_assert!(p.sizes().iter().all(|&s| s > 0));
            }
        }
    }
}
