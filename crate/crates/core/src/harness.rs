//! Monte Carlo measurement: empirical RMSE, normality checks and
//! estimator comparisons over a menu of perturbed score maps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CipwError, Result};
use crate::estimators::{
    cipw, coarse_doubly_robust, doubly_robust, fractional_cipw, ipw, neyman, trimmed_ipw, CoarseScoreTable,
    ConditionalMeanMap,
};
use crate::model::{true_ate, CensoredDataset, FiniteDistribution, FractionalPartition, Partition, PerturbationBall, PropensityMap};
use crate::partition_finder::{robust_ate, FinderConfig};
use crate::rng::derive;
use crate::synth::{perturb_scores, PerturbMode, Sampler};

pub const MIN_REPLICATIONS: usize = 100;
pub const DEFAULT_KS_THRESHOLD: f64 = 0.02;
pub const RANDOM_CORNERS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimator: String,
    pub mode: String,
    pub n: usize,
    pub replications: usize,
    /// Replications where the estimator returned an error; excluded.
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Delta-method standard error of the RMSE.
    pub rmse_se: f64,
    pub seed: u64,
}

pub type CustomFn = Arc<dyn Fn(&CensoredDataset, &PropensityMap) -> Result<f64> + Send + Sync>;

/// Estimator under test. Coarse scores for `Cipw` and `CoarseDr` come from
/// the score map in use, weighted by the distribution's masses.
#[derive(Clone)]
pub enum EstimatorSpec {
    Ipw,
    Trimmed(f64),
    Neyman,
    Cipw(Partition),
    FractionalCipw(FractionalPartition),
    Dr(ConditionalMeanMap),
    CoarseDr(Partition, ConditionalMeanMap),
    RobustAte(FinderConfig),
    Custom(String, CustomFn),
}

impl std::fmt::Debug for EstimatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

type Prepared<'a> = Box<dyn Fn(&CensoredDataset, u64) -> Result<f64> + Send + Sync + 'a>;

impl EstimatorSpec {
    pub fn name(&self) -> String {
        match self {
            Self::Ipw => "ipw".into(),
            Self::Trimmed(eta) => format!("trimmed({eta})"),
            Self::Neyman => "neyman".into(),
            Self::Cipw(_) => "cipw".into(),
            Self::FractionalCipw(_) => "fractional_cipw".into(),
            Self::Dr(_) => "dr".into(),
            Self::CoarseDr(..) => "coarse_dr".into(),
            Self::RobustAte(_) => "robust_ate".into(),
            Self::Custom(name, _) => name.clone(),
        }
    }

    fn prepare<'a>(&'a self, dist: &FiniteDistribution, scores: &'a PropensityMap) -> Result<Prepared<'a>> {
        Ok(match self {
            Self::Ipw => Box::new(move |c, _| ipw(c, scores)),
            Self::Trimmed(eta) => Box::new(move |c, _| trimmed_ipw(c, scores, *eta)),
            Self::Neyman => Box::new(|c, _| neyman(c)),
            Self::Cipw(p) => {
                let coarse = CoarseScoreTable::analytic(dist, p, scores)?;
                Box::new(move |c, _| cipw(c, p, &coarse))
            }
            Self::FractionalCipw(f) => {
                let coarse = CoarseScoreTable::analytic(dist, f, scores)?;
                Box::new(move |c, seed| fractional_cipw(c, f, &coarse, seed))
            }
            Self::Dr(mu) => Box::new(move |c, _| doubly_robust(c, mu, scores)),
            Self::CoarseDr(p, mu) => {
                let coarse = CoarseScoreTable::analytic(dist, p, scores)?;
                Box::new(move |c, _| coarse_doubly_robust(c, p, mu, &coarse))
            }
            Self::RobustAte(cfg) => Box::new(move |c, seed| {
                let cfg = FinderConfig { split_seed: seed, ..cfg.clone() };
                robust_ate(c, scores, &cfg)
            }),
            Self::Custom(_, f) => Box::new(move |c, _| f(c, scores)),
        })
    }
}

fn summarize(name: String, mode: String, n: usize, r: usize, seed: u64, tau: f64, est: &[f64]) -> Result<McReport> {
    if est.is_empty() {
        return Err(CipwError::Domain(format!("{name}: every replication failed")));
    }
    let k = est.len() as f64;
    let mean = est.iter().sum::<f64>() / k;
    let sq: Vec<f64> = est.iter().map(|v| (v - tau) * (v - tau)).collect();
    let mse = sq.iter().sum::<f64>() / k;
    let rmse = mse.sqrt();
    let sq_var = if est.len() > 1 { sq.iter().map(|s| (s - mse) * (s - mse)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    let mse_se = (sq_var / k).sqrt();
    let rmse_se = if rmse > 0.0 { mse_se / (2.0 * rmse) } else { 0.0 };
    Ok(McReport {
        estimator: name,
        mode,
        n,
        replications: r,
        failures: r - est.len(),
        mean,
        bias: mean - tau,
        rmse,
        rmse_se,
        seed,
    })
}

/// Estimates from R datasets of size n drawn with seeds derive(seed, [r]);
/// failed replications are dropped. Order follows r.
pub fn mc_estimates(
    dist: &FiniteDistribution,
    spec: &EstimatorSpec,
    scores: &PropensityMap,
    n: usize,
    r: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = Sampler::new(dist)?;
    let run = spec.prepare(dist, scores)?;
    let out = (0..r)
        .into_par_iter()
        .map(|i| {
            let data = sampler.dataset(n, derive(seed, &[i as u64]))?;
            Ok(run(&data, derive(seed, &[i as u64, 1])).ok())
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Empirical RMSE of an estimator against true_ate(dist).
pub fn mc_rmse(
    dist: &FiniteDistribution,
    spec: &EstimatorSpec,
    scores: &PropensityMap,
    n: usize,
    r: usize,
    seed: u64,
) -> Result<McReport> {
    if r < MIN_REPLICATIONS {
        return Err(CipwError::Config(format!("need at least {MIN_REPLICATIONS} replications, got {r}")));
    }
    let est = mc_estimates(dist, spec, scores, n, r, seed)?;
    summarize(spec.name(), "given".into(), n, r, seed, true_ate(dist), &est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub standardized: Vec<f64>,
    pub ks: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Kolmogorov-Smirnov distance between a sample and N(0, 1).
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let phi = Normal::standard();
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let k = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = phi.cdf(v);
            (((i + 1) as f64 / k) - c).max(c - i as f64 / k)
        })
        .fold(0.0, f64::max)
}

/// Standardizes R estimates of the (fractional) CIPW estimator by their
/// sample mean and sd and measures the KS distance to N(0, 1).
pub fn normality_check(
    dist: &FiniteDistribution,
    part: &FractionalPartition,
    scores_hat: &PropensityMap,
    n: usize,
    r: usize,
    seed: u64,
    threshold: f64,
) -> Result<NormalityReport> {
    if r < 2 {
        return Err(CipwError::Config("normality check needs at least two replications".into()));
    }
    let spec = EstimatorSpec::FractionalCipw(part.clone());
    let est = mc_estimates(dist, &spec, scores_hat, n, r, seed)?;
    if est.len() < 2 {
        return Err(CipwError::Domain("fewer than two successful replications".into()));
    }
    let k = est.len() as f64;
    let mean = est.iter().sum::<f64>() / k;
    let sd = (est.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(CipwError::Domain("estimates have zero spread".into()));
    }
    let standardized: Vec<f64> = est.iter().map(|v| (v - mean) / sd).collect();
    let ks = ks_distance_normal(&standardized);
    Ok(NormalityReport { standardized, ks, threshold, pass: ks < threshold })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<McReport>,
    pub modes: Vec<String>,
}

impl CompareTable {
    /// Report with the largest RMSE for the named estimator.
    pub fn worst(&self, estimator: &str) -> Option<&McReport> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .max_by(|a, b| a.rmse.total_cmp(&b.rmse))
    }

    pub fn get(&self, estimator: &str, mode: &str) -> Option<&McReport> {
        self.rows.iter().find(|r| r.estimator == estimator && r.mode == mode)
    }

    /// CSV with columns estimator, mode, n, rmse, se.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "mode", "n", "rmse", "se"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.estimator.clone(), r.mode.clone(), r.n.to_string(), r.rmse.to_string(), r.rmse_se.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// The score maps the comparison runs under: the truth, then (for ε > 0)
/// anti_outlier, worst_bias and five random corners.
pub fn mode_menu(dist: &FiniteDistribution, ball: &PerturbationBall, seed: u64) -> Result<Vec<(String, PropensityMap)>> {
    let e = &ball.center;
    let mut menu = vec![("e".to_string(), e.clone())];
    if ball.radius == 0.0 {
        return Ok(menu);
    }
    menu.push(("anti_outlier".into(), perturb_scores(e, ball.radius, PerturbMode::AntiOutlier, seed)?));
    menu.push(("worst_bias".into(), perturb_scores(e, ball.radius, PerturbMode::WorstBias(dist), seed)?));
    for i in 0..RANDOM_CORNERS {
        let s = derive(seed, &[0xc0, i as u64]);
        menu.push((format!("random{i}"), perturb_scores(e, ball.radius, PerturbMode::Random, s)?));
    }
    Ok(menu)
}

/// mc_rmse of every estimator under every mode of the menu. All modes of
/// one estimator share the same datasets.
pub fn compare(
    dist: &FiniteDistribution,
    estimators: &[EstimatorSpec],
    ball: &PerturbationBall,
    n: usize,
    r: usize,
    seed: u64,
) -> Result<CompareTable> {
    if r < MIN_REPLICATIONS {
        return Err(CipwError::Config(format!("need at least {MIN_REPLICATIONS} replications, got {r}")));
    }
    let menu = mode_menu(dist, ball, seed)?;
    let tau = true_ate(dist);
    let mut rows = Vec::new();
    for spec in estimators {
        for (mode, scores) in &menu {
            let est = mc_estimates(dist, spec, scores, n, r, seed)?;
            rows.push(summarize(spec.name(), mode.clone(), n, r, seed, tau, &est)?);
        }
    }
    Ok(CompareTable { rows, modes: menu.into_iter().map(|m| m.0).collect() })
}
