//! Partition finder: a data-driven fractional good-local partition built from
//! inaccurate propensity scores, and the end-to-end robust ATE estimate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::estimators::{cipw_assigned, empirical_coarse_scores_assigned, fractional_assign, trimmed_ipw};
use crate::model::{Cell, CensoredDataset, FractionalPartition, Norm, PropensityMap};
use crate::rng::{derive, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinderConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub split_seed: u64,
    #[serde(default)]
    pub k_hint: Option<usize>,
    /// Lipschitz constant of μ_t, when known; enables the trimmed fallback.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl FinderConfig {
    pub fn new(alpha: f64, beta: f64, epsilon: f64, split_seed: u64) -> Self {
        Self { alpha, beta, epsilon, split_seed, k_hint: None, lipschitz: None }
    }

    /// The ê-side outlier level β/3.
    pub fn outlier_threshold(&self) -> f64 {
        self.beta / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CipwError::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 0.25) {
            return Err(CipwError::Config(format!("beta = {} outside (0, 1/4]", self.beta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= self.beta / 10.0) {
            return Err(CipwError::Config(format!("epsilon = {} outside [0, beta/10]", self.epsilon)));
        }
        if self.k_hint == Some(0) {
            return Err(CipwError::Config("k_hint must be positive".into()));
        }
        Ok(())
    }
}

/// One ball opened by the cover loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinderResult {
    pub fpart: FractionalPartition,
    pub tau: f64,
    pub k_found: usize,
    pub balls: Vec<Ball>,
    pub c1_size: usize,
    pub c2_size: usize,
    pub covered_outliers: usize,
    pub null_assigned: usize,
}

/// ê(x)(1 − ê(x)) < β/3.
pub fn is_hat_outlier(scores_hat: &PropensityMap, x: usize, beta: f64) -> Result<bool> {
    let p = scores_hat.get(x)?;
    Ok(p * (1.0 - p) < beta / 3.0)
}

fn sample_counts(c: &CensoredDataset) -> Vec<usize> {
    let mut counts = vec![0usize; c.points().len()];
    for s in c.samples() {
        counts[s.x] += 1;
    }
    counts
}

/// Greedy cover of the ê-outliers of `c1` by closed ℓ∞ balls of radius α.
///
/// Outliers are visited by ascending ê(1 − ê), then by coordinates. A ball
/// collects the C1 covariates within α of its center that no earlier ball
/// took, so hard supports stay disjoint.
pub fn cover_outliers(c1: &CensoredDataset, scores_hat: &PropensityMap, alpha: f64, beta: f64) -> Result<Vec<Ball>> {
    let pts = c1.points();
    let seen = c1.covariates_seen();
    let mut outl = Vec::new();
    for &x in &seen {
        if is_hat_outlier(scores_hat, x, beta)? {
            let p = scores_hat.get(x)?;
            outl.push((p * (1.0 - p), x));
        }
    }
    outl.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            let (ca, cb) = (&pts[a.1].coords, &pts[b.1].coords);
            ca.iter().zip(cb).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut covered = vec![false; pts.len()];
    let mut balls = Vec::new();
    for (_, x) in outl {
        if covered[x] {
            continue;
        }
        let members: Vec<usize> = seen
            .iter()
            .copied()
            .filter(|&z| !covered[z] && Norm::Inf.dist(&pts[x].coords, &pts[z].coords) <= alpha)
            .collect();
        for &z in &members {
            covered[z] = true;
        }
        balls.push(Ball { center: x, members });
    }
    Ok(balls)
}

/// Number of balls the cover loop opens on C1 (no weight updates).
pub fn detect_k(c1: &CensoredDataset, scores_hat: &PropensityMap, alpha: f64, beta: f64) -> Result<usize> {
    Ok(cover_outliers(c1, scores_hat, alpha, beta)?.len())
}

/// w_S for each member of `ball`: 1 for ê-outliers, and
/// min{(η_S + η/k)/(1 − η_S + η/k), 1} for the rest, where η and η_S are
/// the outlier fractions of the samples in `c` and in `c` ∩ S.
pub fn update_weight(
    ball: &[usize],
    c: &CensoredDataset,
    scores_hat: &PropensityMap,
    beta: f64,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(CipwError::Config("UpdateWeight needs k >= 1".into()));
    }
    let counts = sample_counts(c);
    let mut outlier = vec![false; counts.len()];
    let (mut n_out, mut n_all) = (0usize, 0usize);
    for x in 0..counts.len() {
        if counts[x] > 0 {
            outlier[x] = is_hat_outlier(scores_hat, x, beta)?;
            n_all += counts[x];
            if outlier[x] {
                n_out += counts[x];
            }
        }
    }
    let (mut s_out, mut s_all) = (0usize, 0usize);
    for &x in ball {
        if x < counts.len() {
            s_all += counts[x];
            if outlier[x] {
                s_out += counts[x];
            }
        }
    }
    if s_all == 0 {
        return Err(CipwError::Domain("ball contains no samples".into()));
    }
    let eta = n_out as f64 / n_all as f64;
    let eta_s = s_out as f64 / s_all as f64;
    let num = eta_s + eta / k as f64;
    let den = 1.0 - eta_s + eta / k as f64;
    let w = if den > 0.0 { (num / den).min(1.0) } else { 1.0 };
    ball.iter()
        .map(|&x| {
            let o = if x < counts.len() && counts[x] > 0 { outlier[x] } else { is_hat_outlier(scores_hat, x, beta)? };
            Ok((x, if o { 1.0 } else { w }))
        })
        .collect()
}

/// Builds a fractional partition from a dataset with scores ê.
pub fn find_good_partition(c: &CensoredDataset, scores_hat: &PropensityMap, cfg: &FinderConfig) -> Result<FinderResult> {
    cfg.validate()?;
    let n = c.n();
    if n < 2 {
        return Err(CipwError::Domain("partition finder needs at least two samples".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(cfg.split_seed));
    let n1 = n.div_ceil(2);
    let c1 = c.select(&idx[..n1])?;
    let c2 = c.select(&idx[n1..])?;
    let m = c.points().len();

    let balls = cover_outliers(&c1, scores_hat, cfg.alpha, cfg.beta)?;
    let k = cfg.k_hint.unwrap_or(balls.len());

    let mut rows: Vec<Vec<(Cell, f64)>> = vec![Vec::new(); m];
    let mut num_sets = balls.len();
    let mut covered = vec![false; m];
    let mut covered_outliers = 0;
    for (j, b) in balls.iter().enumerate() {
        for (x, w) in update_weight(&b.members, &c1, scores_hat, cfg.beta, k)? {
            covered[x] = true;
            if is_hat_outlier(scores_hat, x, cfg.beta)? {
                covered_outliers += 1;
            }
            rows[x].push((Cell::Set(j), w));
            if w < 1.0 {
                rows[x].push((Cell::Set(num_sets), 1.0 - w));
                num_sets += 1;
            }
        }
    }

    // Second loop over C2, then the same rule for the remaining ids so that
    // the partition covers the whole support.
    let mut in_c2 = vec![false; m];
    for s in c2.samples() {
        in_c2[s.x] = true;
    }
    let mut null_assigned = 0;
    let order = (0..m).filter(|&x| in_c2[x]).chain((0..m).filter(|&x| !in_c2[x]));
    for x in order {
        if covered[x] {
            continue;
        }
        let outlier = match scores_hat.get(x) {
            Ok(p) => p * (1.0 - p) < cfg.outlier_threshold(),
            Err(_) => false,
        };
        if outlier {
            rows[x].push((Cell::Null, 1.0));
            if in_c2[x] {
                null_assigned += 1;
            }
        } else {
            rows[x].push((Cell::Set(num_sets), 1.0));
            num_sets += 1;
        }
    }
    let fpart = FractionalPartition::new(num_sets, rows)?;

    let cells = fractional_assign(&c2, &fpart, derive(cfg.split_seed, &[1]))?;
    let coarse = empirical_coarse_scores_assigned(&c2, scores_hat, &cells, num_sets)?;
    let tau = cipw_assigned(&c2, &cells, &coarse)?;
    Ok(FinderResult {
        fpart,
        tau,
        k_found: balls.len(),
        balls,
        c1_size: c1.n(),
        c2_size: c2.n(),
        covered_outliers,
        null_assigned,
    })
}

/// Robust ATE: the partition finder's estimate, or β-trimmed IPW when a Lipschitz
/// constant is supplied and αL > 1.
pub fn robust_ate(c: &CensoredDataset, scores_hat: &PropensityMap, cfg: &FinderConfig) -> Result<f64> {
    cfg.validate()?;
    if let Some(l) = cfg.lipschitz {
        if cfg.alpha * l > 1.0 {
            return trimmed_ipw(c, scores_hat, cfg.beta);
        }
    }
    Ok(find_good_partition(c, scores_hat, cfg)?.tau)
}

/// (1/(ρ²ε²))·(k³d + ln(1/δ)), the sample size of the main guarantee with
/// its hidden constant set to 1.
pub fn finder_sample_size(rho: f64, eps: f64, k: usize, d: usize, delta: f64) -> f64 {
    ((k as f64).powi(3) * d as f64 + (1.0 / delta).ln()) / (rho * rho * eps * eps)
}
