//! Exact finite-sample moments of CIPW estimators, the ε-robust RMSE,
//! good-local validation and the closed-form upper bounds.
//!
//! All formulas work on the extended domain: a fractional partition splits
//! each covariate x into one copy per positive-weight cell T with mass
//! D(x)·w_T(x). Points in N are excluded and the remaining masses are
//! renormalized by 1 − D(N), which matches an estimator computed from n
//! samples that fall outside N.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::estimators::CoarseScoreTable;
use crate::model::{diameter, true_ate, Cell, Coarsening, FiniteDistribution, PerturbationBall, PropensityMap, ScoreLabel};

/// Slack constant for the big-O bias/variance bound on planted instances.
pub const GOOD_LOCAL_SLACK: f64 = 30.0;
/// Slack constant for the good-local robustness ratio.
pub const ROBUSTNESS_SLACK: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub expectation: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n: u64,
}

impl MomentReport {
    /// expectation ± z·sqrt(variance).
    pub fn interval(&self, z: f64) -> (f64, f64) {
        let h = z * self.variance.sqrt();
        (self.expectation - h, self.expectation + h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLocalReport {
    pub null_mass: f64,
    pub max_diameter: f64,
    /// min over S of e(S)(1 − e(S)); +∞ (serialized as null) when S is empty.
    pub min_overlap: f64,
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionDiagnostics {
    /// b(j) = max_t max_{x1,x2 ∈ S_j} |μ_t(x1) − μ_t(x2)|.
    pub span: Vec<f64>,
    pub mass: Vec<f64>,
    pub diameter: Vec<f64>,
}

impl PartitionDiagnostics {
    /// Whether b(j) ≤ L·diam(S_j) holds for every set.
    pub fn lipschitz_consistent(&self, l: f64) -> bool {
        self.span.iter().zip(&self.diameter).all(|(b, d)| *b <= l * d + 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eq17Bound {
    pub bias_bound: f64,
    pub var_bound: f64,
}

impl Eq17Bound {
    pub fn rmse_bound(&self) -> f64 {
        (self.bias_bound * self.bias_bound + self.var_bound).sqrt()
    }
}

/// How robust_rmse explores the ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobustSearch {
    /// All 2^m sign patterns e ± ε (m ≤ 20).
    Corners,
    /// Coordinate ascent over a k-point grid per coordinate; a lower bound.
    Grid(usize),
}

struct Weighted {
    /// (x, set index, D(x)·w) for every non-null copy.
    copies: Vec<(usize, usize, f64)>,
    null_mass: f64,
    kept_mass: f64,
}

fn weighted<P: Coarsening>(dist: &FiniteDistribution, part: &P) -> Result<Weighted> {
    if part.support_size() != dist.m() {
        return Err(CipwError::Coverage(format!(
            "partition covers {} points, distribution has {}",
            part.support_size(),
            dist.m()
        )));
    }
    let mut copies = Vec::new();
    let (mut null_mass, mut kept_mass) = (0.0, 0.0);
    for c in part.copies() {
        let dw = dist.mass()[c.x] * c.w;
        match c.cell {
            Cell::Set(j) => {
                copies.push((c.x, j, dw));
                kept_mass += dw;
            }
            Cell::Null => null_mass += dw,
        }
    }
    Ok(Weighted { copies, null_mass, kept_mass })
}

fn first_two<P: Coarsening>(dist: &FiniteDistribution, part: &P, scores: &PropensityMap) -> Result<(f64, f64)> {
    let w = weighted(dist, part)?;
    if w.kept_mass <= 0.0 {
        return Err(CipwError::Domain("every point lies in the null set".into()));
    }
    let coarse = CoarseScoreTable::analytic(dist, part, scores)?;
    let (e, mu0, mu1, v0, v1) = (dist.propensity(), dist.mu0(), dist.mu1(), dist.v0(), dist.v1());
    let (mut first, mut second) = (0.0, 0.0);
    for &(x, j, dw) in &w.copies {
        let es = coarse.get(j)?;
        first += dw * (e[x] * mu1[x] / es - (1.0 - e[x]) * mu0[x] / (1.0 - es));
        second += dw
            * (e[x] * (v1[x] + mu1[x] * mu1[x]) / (es * es)
                + (1.0 - e[x]) * (v0[x] + mu0[x] * mu0[x]) / ((1.0 - es) * (1.0 - es)));
    }
    Ok((first / w.kept_mass, second / w.kept_mass))
}

/// E[τ_{S,N}] with coarse denominators taken from `scores` (e or ê).
pub fn cipw_expectation<P: Coarsening>(dist: &FiniteDistribution, part: &P, scores: &PropensityMap) -> Result<f64> {
    Ok(first_two(dist, part, scores)?.0)
}

/// Bias, variance, MSE and RMSE of the CIPW estimator on n samples.
pub fn cipw_moments<P: Coarsening>(
    dist: &FiniteDistribution,
    part: &P,
    scores: &PropensityMap,
    n: u64,
) -> Result<MomentReport> {
    if n == 0 {
        return Err(CipwError::Config("n must be at least 1".into()));
    }
    let (first, second) = first_two(dist, part, scores)?;
    let bias = (true_ate(dist) - first).abs();
    let variance = ((second - first * first) / n as f64).max(0.0);
    let mse = bias * bias + variance;
    Ok(MomentReport { expectation: first, bias, variance, mse, rmse: mse.sqrt(), n })
}

fn shifted(center: &[f64], signs: impl Fn(usize) -> f64, eps: f64) -> PropensityMap {
    let v = center.iter().enumerate().map(|(x, &e)| e + signs(x) * eps).collect();
    PropensityMap::new(v, ScoreLabel::Estimate).expect("strict ball keeps scores inside (0,1)")
}

/// max over ê ∈ B(e, ε) of the RMSE, with the maximizing ê.
///
/// Corners mode evaluates every sign pattern and breaks ties towards the
/// lexicographically smallest pattern (− before +). It is exhaustive over
/// corners only; whether the maximum of the ball is always attained at a
/// corner is not known.
pub fn robust_rmse<P: Coarsening + Sync>(
    dist: &FiniteDistribution,
    part: &P,
    ball: &PerturbationBall,
    n: u64,
    search: RobustSearch,
) -> Result<(f64, PropensityMap)> {
    if !ball.is_strict() {
        return Err(CipwError::Config("perturbation radius reaches the boundary of (0,1)".into()));
    }
    let center = ball.center.dense()?;
    if center.len() != dist.m() {
        return Err(CipwError::Coverage("ball center and distribution differ in size".into()));
    }
    let eps = ball.radius;
    if eps == 0.0 {
        let r = cipw_moments(dist, part, &ball.center, n)?;
        return Ok((r.rmse, ball.center.clone()));
    }
    let m = dist.m();
    match search {
        RobustSearch::Corners => {
            if m > 20 {
                return Err(CipwError::Size(format!("corner search needs m <= 20, got {m}")));
            }
            let best = (0u64..1 << m)
                .into_par_iter()
                .map(|p| {
                    let s = shifted(&center, |x| if (p >> (m - 1 - x)) & 1 == 1 { 1.0 } else { -1.0 }, eps);
                    cipw_moments(dist, part, &s, n).map(|r| (r.rmse, p))
                })
                .try_reduce(
                    || (f64::NEG_INFINITY, u64::MAX),
                    |a, b| Ok(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }),
                )?;
            let p = best.1;
            let s = shifted(&center, |x| if (p >> (m - 1 - x)) & 1 == 1 { 1.0 } else { -1.0 }, eps);
            Ok((best.0, s))
        }
        RobustSearch::Grid(k) => {
            if k < 2 {
                return Err(CipwError::Config("grid search needs at least 2 points per coordinate".into()));
            }
            let steps: Vec<f64> = (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect();
            let mut cur = vec![0.0f64; m];
            let eval = |c: &[f64]| cipw_moments(dist, part, &shifted(&center, |x| c[x], eps), n).map(|r| r.rmse);
            let mut best = eval(&cur)?;
            for _ in 0..1000 {
                let mut improved = false;
                for x in 0..m {
                    let keep = cur[x];
                    let mut arg = keep;
                    for &s in &steps {
                        cur[x] = s;
                        let v = eval(&cur)?;
                        if v > best {
                            best = v;
                            arg = s;
                            improved = true;
                        }
                    }
                    cur[x] = arg;
                }
                if !improved {
                    break;
                }
            }
            Ok((best, shifted(&center, |x| cur[x], eps)))
        }
    }
}

/// Null mass, largest diameter and smallest coarse overlap of a partition,
/// with the (α, β, γ) verdict. Fractional partitions are measured on the
/// extended domain; diameters use the weight support of each set.
pub fn check_good_local<P: Coarsening>(
    dist: &FiniteDistribution,
    part: &P,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<GoodLocalReport> {
    let w = weighted(dist, part)?;
    let k = part.set_count();
    let mut members = vec![Vec::new(); k];
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for &(x, j, dw) in &w.copies {
        members[j].push(x);
        num[j] += dw * dist.propensity()[x];
        den[j] += dw;
    }
    let mut max_diameter = 0.0f64;
    let mut min_overlap = f64::INFINITY;
    for j in 0..k {
        if members[j].is_empty() {
            continue;
        }
        max_diameter = max_diameter.max(diameter(dist.points(), &members[j], dist.norm())?);
        let es = num[j] / den[j];
        min_overlap = min_overlap.min(es * (1.0 - es));
    }
    let null_mass = w.null_mass;
    let verdict = null_mass <= gamma && max_diameter <= alpha && min_overlap >= beta;
    Ok(GoodLocalReport { null_mass, max_diameter, min_overlap, verdict })
}

/// Per-set span b(j), weighted mass and diameter.
pub fn diagnostics<P: Coarsening>(dist: &FiniteDistribution, part: &P) -> Result<PartitionDiagnostics> {
    let w = weighted(dist, part)?;
    let k = part.set_count();
    let mut members = vec![Vec::new(); k];
    let mut mass = vec![0.0; k];
    for &(x, j, dw) in &w.copies {
        members[j].push(x);
        mass[j] += dw;
    }
    let mut span = Vec::with_capacity(k);
    let mut diam = Vec::with_capacity(k);
    for s in &members {
        let range = |v: &[f64]| {
            let lo = s.iter().map(|&x| v[x]).fold(f64::INFINITY, f64::min);
            let hi = s.iter().map(|&x| v[x]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        span.push(range(dist.mu0()).max(range(dist.mu1())));
        diam.push(diameter(dist.points(), s, dist.norm())?);
    }
    Ok(PartitionDiagnostics { span, mass, diameter: diam })
}

/// Closed-form bias and variance bounds. Without L the per-set span b(j)
/// replaces L·diam(S). Requires D(N) ≤ 1/2.
pub fn eq17_bound<P: Coarsening>(
    dist: &FiniteDistribution,
    part: &P,
    scores_hat: &PropensityMap,
    n: u64,
    lipschitz: Option<f64>,
) -> Result<Eq17Bound> {
    if n == 0 {
        return Err(CipwError::Config("n must be at least 1".into()));
    }
    let w = weighted(dist, part)?;
    if w.null_mass > 0.5 {
        return Err(CipwError::Precondition(format!("null mass {} exceeds 1/2", w.null_mass)));
    }
    let diag = diagnostics(dist, part)?;
    let coarse = CoarseScoreTable::analytic(dist, part, scores_hat)?;
    let mut bias = 8.0 * w.null_mass;
    let mut var = 0.0;
    for j in 0..part.set_count() {
        let local = match lipschitz {
            Some(l) => l * diag.diameter[j],
            None => diag.span[j],
        };
        bias += 4.0 * local * diag.mass[j];
        let es = coarse.get(j)?;
        var += diag.mass[j] / (es * (1.0 - es));
    }
    var /= n as f64 * (1.0 - w.null_mass);
    Ok(Eq17Bound { bias_bound: bias, var_bound: var })
}

/// GOOD_LOCAL_SLACK · (αL + ε/β + γ + 1/√(nβ)).
pub fn good_local_rmse_bound(alpha: f64, beta: f64, gamma: f64, eps: f64, n: u64, lipschitz: f64) -> f64 {
    GOOD_LOCAL_SLACK * (alpha * lipschitz + eps / beta + gamma + 1.0 / (n as f64 * beta).sqrt())
}
