//! Regular three-level fractional factorial designs over GF(3).
//!
//! A regular design with `n_basic` basic factors has `3^n_basic` runs. Run `r`
//! is identified with the base-3 digit vector `x` of `r`; column `j` holds
//! `g_j . x mod 3` for its generator vector `g_j`. Basic columns use the unit
//! vectors, added columns use vectors with at least two non-zero entries.
//!
//! The defining-contrast subgroup is the null space of the generator matrix:
//! every `a` with `sum_j a_j g_j = 0`. Its minimum non-zero Hamming weight is
//! the resolution, and a regular design of resolution `R` is an orthogonal
//! array of strength `R - 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{default_labels, FactorTable};

/// Generator vectors of a regular design, one per column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generators {
    pub n_basic: usize,
    pub columns: Vec<Vec<u8>>,
}

/// Runs x factors array of level codes in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n_runs: usize,
    n_factors: usize,
    labels: Vec<String>,
    codes: Vec<u8>,
    generators: Option<Generators>,
}

impl DesignMatrix {
    /// Build a design from explicit rows (no generator metadata).
    pub fn from_rows(labels: Vec<String>, rows: &[Vec<u8>]) -> Result<Self> {
        let n_factors = labels.len();
        if n_factors == 0 || rows.is_empty() {
            return Err(Error::InvalidParameters("empty design".into()));
        }
        let mut codes = Vec::with_capacity(rows.len() * n_factors);
        for row in rows {
            if row.len() != n_factors {
                return Err(Error::LengthMismatch { expected: n_factors, found: row.len() });
            }
            if let Some(c) = row.iter().find(|&&c| c > 2) {
                return Err(Error::InvalidParameters(format!("level code {c} outside 0..=2")));
            }
            codes.extend_from_slice(row);
        }
        Ok(Self { n_runs: rows.len(), n_factors, labels, codes, generators: None })
    }

    /// Build a regular design from generator vectors.
    pub fn from_generators(labels: Vec<String>, generators: Generators) -> Result<Self> {
        let n_factors = generators.columns.len();
        if labels.len() != n_factors {
            return Err(Error::LengthMismatch { expected: n_factors, found: labels.len() });
        }
        let k = generators.n_basic;
        if generators.columns.iter().any(|g| g.len() != k || g.iter().any(|&v| v > 2)) {
            return Err(Error::InvalidParameters("generator vectors must have n_basic entries in GF(3)".into()));
        }
        let n_runs = 3usize.pow(k as u32);
        let mut codes = vec![0u8; n_runs * n_factors];
        let mut digits = vec![0u8; k];
        for r in 0..n_runs {
            // most significant digit first
            let mut rem = r;
            for d in digits.iter_mut().rev() {
                *d = (rem % 3) as u8;
                rem /= 3;
            }
            for (j, g) in generators.columns.iter().enumerate() {
                codes[r * n_factors + j] = dot3(g, &digits);
            }
        }
        Ok(Self { n_runs, n_factors, labels, codes, generators: Some(generators) })
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

    pub fn generators(&self) -> Option<&Generators> {
        self.generators.as_ref()
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn row(&self, run: usize) -> &[u8] {
        &self.codes[run * self.n_factors..(run + 1) * self.n_factors]
    }

    pub fn code(&self, run: usize, factor: usize) -> u8 {
        self.codes[run * self.n_factors + factor]
    }

    pub fn column(&self, factor: usize) -> Vec<u8> {
        (0..self.n_runs).map(|r| self.code(r, factor)).collect()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_factors {
            return Err(Error::LengthMismatch { expected: self.n_factors, found: labels.len() });
        }
        self.labels = labels;
        Ok(self)
    }

    /// Reorder runs; the result carries no generator metadata.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_runs {
            return Err(Error::LengthMismatch { expected: self.n_runs, found: order.len() });
        }
        let rows: Vec<Vec<u8>> = order.iter().map(|&r| self.row(r).to_vec()).collect();
        Self::from_rows(self.labels.clone(), &rows)
    }

    /// Header of factor ids, then one row of codes per run.
    pub fn to_csv(&self) -> String {
        let mut out = self.labels.join(",");
        out.push('\n');
        for r in 0..self.n_runs {
            let row = self.row(r).iter().map(|c| c.to_string()).join(",");
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// Same layout as [`to_csv`](Self::to_csv) with physical level values substituted.
    pub fn to_physical_csv(&self, table: &FactorTable) -> Result<String> {
        let specs = self
            .labels
            .iter()
            .map(|id| {
                table
                    .get(id)
                    .ok_or_else(|| Error::InvalidParameters(format!("factor {id} missing from table")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.labels.join(",");
        out.push('\n');
        for r in 0..self.n_runs {
            let row = self.row(r).iter().zip(&specs).map(|(&c, s)| s.physical(c)).join(",");
            let _ = writeln!(out, "{row}");
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::InvalidParameters("empty design CSV".into()))?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let rows = lines
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<u8>()
                            .map_err(|e| Error::InvalidParameters(format!("bad code {c:?}: {e}")))
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(labels, &rows)
    }
}

fn dot3(g: &[u8], x: &[u8]) -> u8 {
    (g.iter().zip(x).map(|(&a, &b)| a as u32 * b as u32).sum::<u32>() % 3) as u8
}

/// Parameters of the generator search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub n_factors: usize,
    pub n_basic: usize,
    pub min_resolution: usize,
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub candidate_budget: u64,
}

fn default_budget() -> u64 {
    1_000_000
}

impl DesignParams {
    pub fn new(n_factors: usize, n_basic: usize, min_resolution: usize) -> Self {
        Self { n_factors, n_basic, min_resolution, seed: 0, candidate_budget: default_budget() }
    }
}

const RESTARTS: u64 = 10;

/// Search for generator columns giving a regular design of at least `min_resolution`.
///
/// The first attempt walks candidates in lexicographic order; if it exhausts its
/// share of the budget, later attempts shuffle the candidate order with streams
/// derived from `seed`. A completed exhaustive walk without a hit is conclusive.
pub fn generate_regular_design(params: &DesignParams) -> Result<DesignMatrix> {
    let DesignParams { n_factors, n_basic, min_resolution, seed, candidate_budget } = *params;
    if n_factors < 3 || n_basic == 0 || n_basic > n_factors {
        return Err(Error::InvalidParameters(format!(
            "need 3 <= n_factors and 1 <= n_basic <= n_factors, got {n_factors}, {n_basic}"
        )));
    }
    let runs = 3u128.checked_pow(n_basic as u32).filter(|&r| r <= 1 << 24).ok_or_else(|| {
        Error::InvalidParameters(format!("3^{n_basic} runs is too large"))
    })?;
    if runs < 1 + 2 * n_factors as u128 {
        return Err(Error::InvalidParameters(format!(
            "3^{n_basic} = {runs} runs cannot hold {n_factors} three-level main effects"
        )));
    }

    let mut columns: Vec<Vec<u8>> = (0..n_basic)
        .map(|i| (0..n_basic).map(|j| u8::from(i == j)).collect())
        .collect();
    let n_added = n_factors - n_basic;
    let min_weight = min_resolution.saturating_sub(1).max(2);
    let infeasible = |searched| Error::InfeasibleDesign { n_factors, n_basic, min_resolution, searched };

    let added = if n_added == 0 {
        Vec::new()
    } else {
        let base = candidate_columns(n_basic, min_weight);
        let per_attempt = (candidate_budget / RESTARTS).max(1);
        let mut searched = 0u64;
        let mut found = None;
        for attempt in 0..RESTARTS {
            let mut order = base.clone();
            if attempt > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(attempt);
                order.shuffle(&mut rng);
            }
            let mut search = GeneratorSearch::new(&order, n_basic, n_added, min_resolution, per_attempt);
            let outcome = search.run();
            searched += search.visited;
            match outcome {
                SearchOutcome::Found(set) => {
                    found = Some(set);
                    break;
                }
                SearchOutcome::Exhausted => return Err(infeasible(searched)),
                SearchOutcome::BudgetSpent => continue,
            }
        }
        found.ok_or_else(|| infeasible(searched))?
    };
    columns.extend(added);
    DesignMatrix::from_generators(default_labels(n_factors), Generators { n_basic, columns })
}

/// Normalized vectors (first non-zero entry 1) with at least `min_weight` non-zeros, lexicographic.
fn candidate_columns(k: usize, min_weight: usize) -> Vec<Vec<u8>> {
    let total = 3usize.pow(k as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut v = vec![0u8; k];
        let mut rem = idx;
        for d in v.iter_mut().rev() {
            *d = (rem % 3) as u8;
            rem /= 3;
        }
        let first = v.iter().find(|&&x| x != 0);
        let weight = v.iter().filter(|&&x| x != 0).count();
        if first == Some(&1) && weight >= min_weight {
            out.push(v);
        }
    }
    out
}

enum SearchOutcome {
    Found(Vec<Vec<u8>>),
    Exhausted,
    BudgetSpent,
}

/// Depth-first search over candidate generator columns.
///
/// `words` holds, for every coefficient vector `c` over the chosen added
/// columns, the pair (non-zeros of `c`, basic part `sum c_j g_j`). The defining
/// word of `c` has weight `nnz(c) + wt(basic part)`.
struct GeneratorSearch<'a> {
    candidates: &'a [Vec<u8>],
    k: usize,
    depth: usize,
    min_resolution: usize,
    budget: u64,
    visited: u64,
}

impl<'a> GeneratorSearch<'a> {
    fn new(candidates: &'a [Vec<u8>], k: usize, depth: usize, min_resolution: usize, budget: u64) -> Self {
        Self { candidates, k, depth, min_resolution, budget, visited: 0 }
    }

    fn run(&mut self) -> SearchOutcome {
        let mut chosen = Vec::with_capacity(self.depth);
        let words = vec![(0usize, vec![0u8; self.k])];
        match self.extend(0, &mut chosen, &words) {
            Some(true) => SearchOutcome::Found(chosen.iter().map(|&i| self.candidates[i].clone()).collect()),
            Some(false) => SearchOutcome::Exhausted,
            None => SearchOutcome::BudgetSpent,
        }
    }

    /// `Some(true)` on success, `Some(false)` when the subtree is exhausted, `None` on budget.
    fn extend(&mut self, start: usize, chosen: &mut Vec<usize>, words: &[(usize, Vec<u8>)]) -> Option<bool> {
        if chosen.len() == self.depth {
            return Some(true);
        }
        let remaining = self.depth - chosen.len();
        for i in start..self.candidates.len() {
            if self.candidates.len() - i < remaining {
                break;
            }
            self.visited += 1;
            if self.visited > self.budget {
                return None;
            }
            let g = &self.candidates[i];
            if let Some(next) = self.try_add(g, words) {
                chosen.push(i);
                match self.extend(i + 1, chosen, &next) {
                    Some(true) => return Some(true),
                    Some(false) => {
                        chosen.pop();
                    }
                    None => return None,
                }
            }
        }
        Some(false)
    }

    fn try_add(&self, g: &[u8], words: &[(usize, Vec<u8>)]) -> Option<Vec<(usize, Vec<u8>)>> {
        let mut next = Vec::with_capacity(words.len() * 3);
        next.extend(words.iter().cloned());
        for a in 1..=2u8 {
            for (nnz, basic) in words {
                let v: Vec<u8> = basic.iter().zip(g).map(|(&b, &x)| (b + a * x) % 3).collect();
                let weight = nnz + 1 + v.iter().filter(|&&x| x != 0).count();
                if weight < self.min_resolution {
                    return None;
                }
                next.push((nnz + 1, v));
            }
        }
        Some(next)
    }
}

/// Resolution of a regular design; full factorials have no defining words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub strength: usize,
    pub resolution: Resolution,
    /// Count of non-zero defining words by length.
    pub word_length_pattern: BTreeMap<usize, usize>,
    /// Projections checked by the model-free counter (0 when only the algebra was used).
    pub checked_projections: usize,
}

/// Enumerate the defining-contrast subgroup and summarize it by word length.
pub fn word_length_pattern(design: &DesignMatrix) -> Result<StrengthReport> {
    let gens = design.generators().ok_or(Error::NotRegular)?;
    let words = null_space_gf3(&gens.columns, gens.n_basic);
    let mut pattern = BTreeMap::new();
    for w in &words {
        let len = w.iter().filter(|&&x| x != 0).count();
        if len > 0 {
            *pattern.entry(len).or_insert(0) += 1;
        }
    }
    let (resolution, strength) = match pattern.keys().next() {
        Some(&r) => (Resolution::Finite(r), r - 1),
        None => (Resolution::Infinite, design.n_factors()),
    };
    Ok(StrengthReport { strength, resolution, word_length_pattern: pattern, checked_projections: 0 })
}

/// Algebraic report cross-checked by counting every projection at the reported strength.
pub fn certify(design: &DesignMatrix) -> Result<(StrengthReport, StrengthCheck)> {
    let mut report = word_length_pattern(design)?;
    let check = verify_strength(design, report.strength);
    report.checked_projections = check.checked_projections;
    Ok((report, check))
}

/// All vectors `a` in GF(3)^n with `sum_j a_j columns[j] = 0` (columns have `k` entries).
fn null_space_gf3(columns: &[Vec<u8>], k: usize) -> Vec<Vec<u8>> {
    let n = columns.len();
    // k x n matrix, row reduce
    let mut m: Vec<Vec<u8>> = (0..k).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == k {
            break;
        }
        let Some(p) = (row..k).find(|&r| m[r][col] != 0) else { continue };
        m.swap(row, p);
        let inv = if m[row][col] == 1 { 1 } else { 2 };
        for v in m[row].iter_mut() {
            *v = (*v * inv) % 3;
        }
        for r in 0..k {
            if r != row && m[r][col] != 0 {
                let f = m[r][col];
                for c in 0..n {
                    m[r][c] = (m[r][c] + 3 - (f * m[row][c]) % 3) % 3;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let count = 3usize.pow(free.len() as u32);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut a = vec![0u8; n];
        let mut rem = idx;
        for &f in free.iter().rev() {
            a[f] = (rem % 3) as u8;
            rem /= 3;
        }
        for (r, &pc) in pivots.iter().enumerate() {
            let s: u32 = free.iter().map(|&f| m[r][f] as u32 * a[f] as u32).sum();
            a[pc] = ((3 - s % 3) % 3) as u8;
        }
        out.push(a);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// The run count is not a multiple of 3^t.
    NotDivisible { n_runs: usize, t: usize },
    /// A level tuple in a projection occurs the wrong number of times.
    Unbalanced { columns: Vec<usize>, tuple: Vec<u8>, count: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrengthCheck {
    pub holds: bool,
    pub checked_projections: usize,
    pub violations: Vec<Violation>,
}

/// Count level tuples in every `t`-column projection. Works for any array.
pub fn verify_strength(design: &DesignMatrix, t: usize) -> StrengthCheck {
    let n = design.n_runs();
    if t == 0 {
        return StrengthCheck { holds: true, checked_projections: 0, violations: Vec::new() };
    }
    if t > design.n_factors() {
        return StrengthCheck {
            holds: false,
            checked_projections: 0,
            violations: vec![Violation::NotDivisible { n_runs: n, t }],
        };
    }
    let cells = 3usize.pow(t as u32);
    if n % cells != 0 {
        return StrengthCheck {
            holds: false,
            checked_projections: 0,
            violations: vec![Violation::NotDivisible { n_runs: n, t }],
        };
    }
    let expected = n / cells;
    let subsets: Vec<Vec<usize>> = (0..design.n_factors()).combinations(t).collect();
    let violations: Vec<Violation> = subsets
        .par_iter()
        .flat_map_iter(|cols| {
            let mut counts = vec![0usize; cells];
            for r in 0..n {
                let idx = cols.iter().fold(0usize, |acc, &c| acc * 3 + design.code(r, c) as usize);
                counts[idx] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c != expected)
                .map(|(idx, count)| {
                    let mut tuple = vec![0u8; t];
                    let mut rem = idx;
                    for v in tuple.iter_mut().rev() {
                        *v = (rem % 3) as u8;
                        rem /= 3;
                    }
                    Violation::Unbalanced { columns: cols.clone(), tuple, count, expected }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    StrengthCheck { holds: violations.is_empty(), checked_projections: subsets.len(), violations }
}

/// Largest `t` for which [`verify_strength`] holds (model-free).
pub fn empirical_strength(design: &DesignMatrix) -> usize {
    let mut t = 0;
    while t < design.n_factors() && verify_strength(design, t + 1).holds {
        t += 1;
    }
    t
}
