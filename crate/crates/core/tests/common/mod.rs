#![allow(dead_code)]

use cipw::model::{make_support, FiniteDistribution, Norm};
use cipw::rng::Rng;
use rand::Rng as _;

/// Random distribution on 1-d points 0..m-1 with e in [e_lo, 1 - e_lo] and
/// a [-1,1] outcome law for every (μ, v).
pub fn random_dist(rng: &mut Rng, m: usize, e_lo: f64) -> FiniteDistribution {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let tot: f64 = raw.iter().sum();
    let mass = raw.iter().map(|v| v / tot).collect();
    let e = (0..m).map(|_| rng.random_range(e_lo..1.0 - e_lo)).collect();
    let mu0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu1: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v0 = mu0.iter().map(|u: &f64| rng.random_range(0.0..=1.0 - u * u)).collect();
    let v1 = mu1.iter().map(|u: &f64| rng.random_range(0.0..=1.0 - u * u)).collect();
    let pts = make_support((0..m).map(|x| vec![x as f64]).collect()).unwrap();
    FiniteDistribution::new(pts, mass, e, mu0, mu1, v0, v1, Norm::Inf).unwrap()
}
