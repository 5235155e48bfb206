//! Point estimators of τ from a censored dataset.
//!
//! Every estimator returns a hard error on degenerate input (empty arm, empty
//! trimmed set, all samples in N) instead of propagating NaN.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::model::{
    Cell, CensoredDataset, CensoredSample, Coarsening, FiniteDistribution, FractionalPartition, Partition,
    PropensityMap,
};
use crate::rng::child_rng;

/// Lower clip applied to empirical coarse scores.
pub const SCORE_CLIP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseSource {
    Analytic,
    Empirical,
}

/// Coarse propensity per member of S. Missing entries mark sets for which
/// no score could be formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseScoreTable {
    values: Vec<Option<f64>>,
    source: CoarseSource,
}

impl CoarseScoreTable {
    pub fn new(values: Vec<f64>, source: CoarseSource) -> Result<Self> {
        Self::partial(values.into_iter().map(Some).collect(), source)
    }

    pub fn partial(values: Vec<Option<f64>>, source: CoarseSource) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| matches!(v, Some(p) if !(*p > 0.0 && *p < 1.0))) {
            return Err(CipwError::Domain(format!("coarse score of set {j} = {:?} outside (0,1)", values[j])));
        }
        Ok(Self { values, source })
    }

    /// ê(S) from `scores` with the distribution's (weighted) masses.
    pub fn analytic<P: Coarsening>(dist: &FiniteDistribution, part: &P, scores: &PropensityMap) -> Result<Self> {
        let s = scores.dense()?;
        let k = part.set_count();
        let mut num = vec![0.0; k];
        let mut den = vec![0.0; k];
        for c in part.copies() {
            if let Cell::Set(j) = c.cell {
                let w = c.w * dist.mass()[c.x];
                num[j] += w * s[c.x];
                den[j] += w;
            }
        }
        let values = (0..k)
            .map(|j| {
                if den[j] > 0.0 {
                    Ok(num[j] / den[j])
                } else {
                    Err(CipwError::Domain(format!("set {j} has zero mass")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, CoarseSource::Analytic)
    }

    /// Per-point table for a singleton partition built by `Partition::singletons`.
    pub fn pointwise(scores: &PropensityMap) -> Self {
        Self { values: scores.raw().to_vec(), source: CoarseSource::Analytic }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn source(&self) -> CoarseSource {
        self.source
    }
    pub fn raw(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, j: usize) -> Result<f64> {
        self.values
            .get(j)
            .copied()
            .flatten()
            .ok_or_else(|| CipwError::Lookup(format!("no coarse score for set {j}")))
    }
}

/// Per-covariate conditional means (μ0, μ1) for doubly robust estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanMap {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl ConditionalMeanMap {
    pub fn new(mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        if mu0.len() != mu1.len() {
            return Err(CipwError::Data("mu0 and mu1 differ in length".into()));
        }
        if mu0.iter().chain(&mu1).any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(CipwError::Data("conditional means must lie in [-1,1]".into()));
        }
        Ok(Self { mu0, mu1 })
    }

    pub fn from_dist(dist: &FiniteDistribution) -> Self {
        Self { mu0: dist.mu0().to_vec(), mu1: dist.mu1().to_vec() }
    }

    fn get(&self, x: usize) -> Result<(f64, f64)> {
        match (self.mu0.get(x), self.mu1.get(x)) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(CipwError::Lookup(format!("no conditional means for covariate {x}"))),
        }
    }
}

#[inline]
fn ipw_term(s: &CensoredSample, e: f64) -> f64 {
    if s.t {
        s.y / e
    } else {
        -(s.y / (1.0 - e))
    }
}

#[inline]
fn dr_term(s: &CensoredSample, e: f64, mu0: f64, mu1: f64) -> f64 {
    let t = if s.t { 1.0 } else { 0.0 };
    (t - e) * (s.y - mu1) / e - (e - t) * (s.y - mu0) / (1.0 - e)
}

/// Difference in arm means.
pub fn neyman(data: &CensoredDataset) -> Result<f64> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for s in data.samples() {
        if s.t {
            s1 += s.y;
            n1 += 1;
        } else {
            s0 += s.y;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(CipwError::Domain("neyman needs both a treated and a control sample".into()));
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// (1/n) Σ (t y / e(x) − (1−t) y / (1−e(x))).
pub fn ipw(data: &CensoredDataset, scores: &PropensityMap) -> Result<f64> {
    let mut sum = 0.0;
    for s in data.samples() {
        sum += ipw_term(s, scores.get(s.x)?);
    }
    Ok(sum / data.n() as f64)
}

/// IPW over the samples whose score lies in [η, 1−η], divided by their count.
pub fn trimmed_ipw(data: &CensoredDataset, scores: &PropensityMap, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(CipwError::Config(format!("trimming level {eta} outside (0, 1/2)")));
    }
    let (mut sum, mut kept) = (0.0, 0usize);
    for s in data.samples() {
        let e = scores.get(s.x)?;
        if e >= eta && e <= 1.0 - eta {
            sum += ipw_term(s, e);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(CipwError::Domain(format!("every sample trimmed at level {eta}")));
    }
    Ok(sum / kept as f64)
}

/// CIPW over an explicit per-sample assignment to S ∪ {N}.
pub fn cipw_assigned(data: &CensoredDataset, cells: &[Cell], coarse: &CoarseScoreTable) -> Result<f64> {
    let (mut sum, mut kept) = (0.0, 0usize);
    for (s, c) in data.samples().iter().zip(cells) {
        if let Cell::Set(j) = *c {
            sum += ipw_term(s, coarse.get(j)?);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(CipwError::Domain("every sample falls in the null set".into()));
    }
    Ok(sum / kept as f64)
}

fn hard_cells(data: &CensoredDataset, part: &Partition) -> Result<Vec<Cell>> {
    data.samples()
        .iter()
        .map(|s| {
            part.cell_of(s.x)
                .ok_or_else(|| CipwError::Coverage(format!("covariate {} not covered by the partition", s.x)))
        })
        .collect()
}

/// Coarse IPW: samples in N are dropped from both sum and divisor.
pub fn cipw(data: &CensoredDataset, part: &Partition, coarse: &CoarseScoreTable) -> Result<f64> {
    cipw_assigned(data, &hard_cells(data, part)?, coarse)
}

/// Independent assignment of each sample to a cell with probability w_T(x).
///
/// The uniform for a sample is keyed by its content (x, y, t) and its
/// occurrence rank among identical samples, so reordering the dataset
/// permutes the assignment along with it.
pub fn fractional_assign(data: &CensoredDataset, fpart: &FractionalPartition, seed: u64) -> Result<Vec<Cell>> {
    let mut occ: HashMap<(usize, u64, bool), u64> = HashMap::new();
    data.samples()
        .iter()
        .map(|s| {
            let row = fpart
                .row(s.x)
                .filter(|r| !r.is_empty())
                .ok_or_else(|| CipwError::Coverage(format!("covariate {} has no weights", s.x)))?;
            if let [(c, _)] = row {
                return Ok(*c);
            }
            let ybits = (s.y + 0.0).to_bits();
            let k = occ.entry((s.x, ybits, s.t)).or_insert(0);
            let u: f64 = child_rng(seed, &[s.x as u64, ybits, s.t as u64, *k]).random();
            *k += 1;
            let mut acc = 0.0;
            for &(c, w) in row {
                acc += w;
                if u < acc {
                    return Ok(c);
                }
            }
            Ok(row[row.len() - 1].0)
        })
        .collect()
}

/// Fractional CIPW: random assignment by weights, then the coarse IPW sum.
pub fn fractional_cipw(
    data: &CensoredDataset,
    fpart: &FractionalPartition,
    coarse: &CoarseScoreTable,
    seed: u64,
) -> Result<f64> {
    cipw_assigned(data, &fractional_assign(data, fpart, seed)?, coarse)
}

/// Doubly robust (AIPW) estimator.
pub fn doubly_robust(data: &CensoredDataset, mu: &ConditionalMeanMap, scores: &PropensityMap) -> Result<f64> {
    let mut sum = 0.0;
    for s in data.samples() {
        let (m0, m1) = mu.get(s.x)?;
        sum += dr_term(s, scores.get(s.x)?, m0, m1);
    }
    Ok(sum / data.n() as f64)
}

/// Doubly robust summand with e(S) in place of e(x) and the coarse IPW divisor.
pub fn coarse_doubly_robust(
    data: &CensoredDataset,
    part: &Partition,
    mu: &ConditionalMeanMap,
    coarse: &CoarseScoreTable,
) -> Result<f64> {
    let cells = hard_cells(data, part)?;
    let (mut sum, mut kept) = (0.0, 0usize);
    for (s, c) in data.samples().iter().zip(&cells) {
        if let Cell::Set(j) = *c {
            let (m0, m1) = mu.get(s.x)?;
            sum += dr_term(s, coarse.get(j)?, m0, m1);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(CipwError::Domain("every sample falls in the null set".into()));
    }
    Ok(sum / kept as f64)
}

/// Per-set mean of ê over the samples assigned to it, clipped to
/// [SCORE_CLIP, 1 − SCORE_CLIP]. Sets without samples are left empty.
pub fn empirical_coarse_scores_assigned(
    data: &CensoredDataset,
    scores_hat: &PropensityMap,
    cells: &[Cell],
    num_sets: usize,
) -> Result<CoarseScoreTable> {
    let mut sum = vec![0.0; num_sets];
    let mut cnt = vec![0usize; num_sets];
    for (s, c) in data.samples().iter().zip(cells) {
        if let Cell::Set(j) = *c {
            sum[j] += scores_hat.get(s.x)?;
            cnt[j] += 1;
        }
    }
    let values = (0..num_sets)
        .map(|j| (cnt[j] > 0).then(|| (sum[j] / cnt[j] as f64).clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)))
        .collect();
    CoarseScoreTable::partial(values, CoarseSource::Empirical)
}

/// Empirical coarse scores for a hard partition.
pub fn empirical_coarse_scores(
    data: &CensoredDataset,
    scores_hat: &PropensityMap,
    part: &Partition,
) -> Result<CoarseScoreTable> {
    empirical_coarse_scores_assigned(data, scores_hat, &hard_cells(data, part)?, part.sets().len())
}

/// Blocking partition: one set per score interval [b_i, b_{i+1}), empty
/// intervals dropped. Feed the result to `cipw`.
pub fn blocking_partition(scores: &PropensityMap, boundaries: &[f64]) -> Result<Partition> {
    let s = scores.dense()?;
    let labels: Vec<usize> = s.iter().map(|&v| boundaries.iter().filter(|&&b| b <= v).count()).collect();
    balancing_partition(&labels)
}

/// Balancing partition: covariates sharing a label form one set.
pub fn balancing_partition<L: Ord + Clone>(labels: &[L]) -> Result<Partition> {
    let mut groups: std::collections::BTreeMap<L, Vec<usize>> = std::collections::BTreeMap::new();
    for (x, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(x);
    }
    Partition::new(groups.into_values().collect(), vec![], labels.len())
}
