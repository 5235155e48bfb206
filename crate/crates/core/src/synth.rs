//! Generators for the fixed lower-bound constructions and for planted-outlier
//! distributions, unconfounded sampling, and adversarial score perturbation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::estimators::SCORE_CLIP;
use crate::model::{
    make_support, true_ate, CensoredDataset, CensoredSample, FiniteDistribution, Norm, Partition, PropensityMap,
    ScoreLabel,
};
use crate::rng::{child_rng, rng_from};

fn build(points: Vec<Vec<f64>>, cols: [Vec<f64>; 6]) -> Result<FiniteDistribution> {
    let [mass, e, mu0, mu1, v0, v1] = cols;
    FiniteDistribution::new(make_support(points)?, mass, e, mu0, mu1, v0, v1, Norm::Inf)
}

/// μ1 of the outlier-grid construction: 0 up to 1/3, slope 3, then 1.
pub fn thm91_mu1(x: f64) -> f64 {
    if x <= 1.0 / 3.0 {
        0.0
    } else if x <= 2.0 / 3.0 {
        3.0 * (x - 1.0 / 3.0)
    } else {
        1.0
    }
}

/// Outlier-grid construction on [0,1].
///
/// Atoms at 0, 1−ε (mass (1−ε)/6) and ε, 1 (mass (1−ε)/3); the ε-density
/// part becomes `grid_points` atoms at (j + 1/2)/G with mass ε/G each. With
/// `grid_points = 0` the four atoms are renormalized. e = δ at ε and 1−ε,
/// 1/2 elsewhere, δ = η²/(10·n_intended). μ0 = v0 = 0. The printed v1 = 1
/// admits no [-1,1] outcome law where μ1 ≠ 0, so v1 = 1 − μ1² (the largest
/// feasible value, equal to 1 wherever μ1 = 0).
pub fn make_thm91(eta: f64, eps: f64, grid_points: usize, n_intended: u64) -> Result<FiniteDistribution> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(CipwError::Config(format!("eta = {eta} outside (0,1)")));
    }
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(CipwError::Config(format!("eps = {eps} outside (0,1/3)")));
    }
    if grid_points % 2 != 0 {
        return Err(CipwError::Config("grid_points must be even".into()));
    }
    if n_intended == 0 {
        return Err(CipwError::Config("n_intended must be positive".into()));
    }
    let delta = eta * eta / (10.0 * n_intended as f64);
    let scale = if grid_points == 0 { 1.0 } else { 1.0 - eps };
    let mut atoms: Vec<(f64, f64, f64)> = vec![
        (0.0, scale / 6.0, 0.5),
        (eps, scale / 3.0, delta),
        (1.0 - eps, scale / 6.0, delta),
        (1.0, scale / 3.0, 0.5),
    ];
    for j in 0..grid_points {
        let x = (j as f64 + 0.5) / grid_points as f64;
        if atoms[..4].iter().any(|a| a.0 == x) {
            return Err(CipwError::Geometry(format!("grid atom {x} collides with a point mass")));
        }
        atoms.push((x, eps / grid_points as f64, 0.5));
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mu1: Vec<f64> = atoms.iter().map(|a| thm91_mu1(a.0)).collect();
    let v1 = mu1.iter().map(|m| 1.0 - m * m).collect();
    let m = atoms.len();
    build(
        atoms.iter().map(|a| vec![a.0]).collect(),
        [atoms.iter().map(|a| a.1).collect(), atoms.iter().map(|a| a.2).collect(), vec![0.0; m], mu1, vec![0.0; m], v1],
    )
}

/// Two nearby points of mass 1/2, e = (η, 1/2), μ1 = 1,
/// v1 = 1, μ0 = v0 = 0. The printed (μ1, v1) = (1, 1) has no [-1,1] law;
/// use `with_feasible_variances` before sampling.
pub fn make_prop92(eta: f64) -> Result<FiniteDistribution> {
    if !(eta > 0.0 && eta <= 0.25) {
        return Err(CipwError::Config(format!("eta = {eta} outside (0, 1/4]")));
    }
    build(
        vec![vec![0.0], vec![0.01]],
        [vec![0.5, 0.5], vec![eta, 0.5], vec![0.0; 2], vec![1.0; 2], vec![0.0; 2], vec![1.0; 2]],
    )
}

/// Two-point outlier: e = (ε, 1/2), μ1 = v1 = 1/2, μ0 = v0 = 0, mass 1/2 each.
pub fn make_lem_c1(eps: f64) -> Result<FiniteDistribution> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CipwError::Config(format!("eps = {eps} outside (0,1)")));
    }
    build(
        vec![vec![0.0], vec![1.0]],
        [vec![0.5, 0.5], vec![eps, 0.5], vec![0.0; 2], vec![0.5; 2], vec![0.0; 2], vec![0.5; 2]],
    )
}

/// Two-point dichotomy: e = (7/8, 1/8), μ1 = (1, 0), μ0 = v0 = 0, mass 1/2 each.
/// v1 is not fixed by the construction; it is 0 here.
pub fn make_lem16() -> FiniteDistribution {
    build(
        vec![vec![0.0], vec![1.0]],
        [vec![0.5, 0.5], vec![0.875, 0.125], vec![0.0; 2], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2]],
    )
    .expect("fixed construction is valid")
}

/// Rare-treatment pair: x1 = 0, x2 = α, D = (ρ, 1−ρ), e = (η, 1/2), μ1 = (choice, 0),
/// μ0 = v0 = v1 = 0. The choice must lie in [−αL, αL] ∩ [−1, 1].
pub fn make_thm_d1(alpha: f64, beta: f64, lipschitz: f64, rho: f64, eta: f64, mu1_choice: f64) -> Result<FiniteDistribution> {
    if !(alpha > 0.0 && beta > 0.0 && lipschitz > 0.0) {
        return Err(CipwError::Config("alpha, beta and L must be positive".into()));
    }
    if !(rho > 0.0 && rho < 1.0 && eta > 0.0 && eta < 1.0) {
        return Err(CipwError::Config("rho and eta must lie in (0,1)".into()));
    }
    let lim = (alpha * lipschitz).min(1.0);
    if mu1_choice.abs() > lim {
        return Err(CipwError::Config(format!("mu1 choice {mu1_choice} outside [-{lim}, {lim}]")));
    }
    build(
        vec![vec![0.0], vec![alpha]],
        [vec![rho, 1.0 - rho], vec![eta, 0.5], vec![0.0; 2], vec![mu1_choice, 0.0], vec![0.0; 2], vec![0.0; 2]],
    )
}

/// Parameters of a planted-outlier instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Total mass of the planted outliers.
    pub rho: f64,
    pub lipschitz: f64,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub outliers_per_ball: usize,
    #[serde(default = "default_in")]
    pub inliers_per_ball: usize,
    #[serde(default = "default_bg")]
    pub background_points: usize,
}

fn default_out() -> usize {
    2
}
fn default_in() -> usize {
    3
}
fn default_bg() -> usize {
    12
}

impl PlantedSpec {
    pub fn new(d: usize, k: usize, alpha: f64, beta: f64, rho: f64, lipschitz: f64, seed: u64) -> Self {
        Self {
            d,
            k,
            alpha,
            beta,
            rho,
            lipschitz,
            seed,
            outliers_per_ball: default_out(),
            inliers_per_ball: default_in(),
            background_points: default_bg(),
        }
    }
}

/// Fraction of each planted ball's mass carried by non-outliers.
pub const PLANTED_INLIER_FRACTION: f64 = 0.6;

/// A planted distribution with its ground-truth structure.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDistribution {
    pub dist: FiniteDistribution,
    pub centers: Vec<Vec<f64>>,
    /// Ids inside each ball (outliers and non-outliers).
    pub balls: Vec<Vec<usize>>,
    pub outliers: Vec<usize>,
}

impl PlantedDistribution {
    /// The balls as sets and every other point as a singleton, N = ∅.
    pub fn reference_partition(&self) -> Partition {
        let m = self.dist.m();
        let mut in_ball = vec![false; m];
        let mut sets = self.balls.clone();
        for b in &self.balls {
            for &x in b {
                in_ball[x] = true;
            }
        }
        sets.extend((0..m).filter(|&x| !in_ball[x]).map(|x| vec![x]));
        Partition::new(sets, vec![], m).expect("balls are disjoint")
    }

    pub fn outlier_mass(&self) -> f64 {
        self.outliers.iter().map(|&x| self.dist.mass()[x]).sum()
    }
}

/// Random L-Lipschitz piecewise-linear field: max of three affine maps with
/// ‖c‖₁ ≤ L, clamped to [−1, 1].
struct Field {
    pieces: Vec<(f64, Vec<f64>)>,
}

impl Field {
    fn random(d: usize, l: f64, rng: &mut crate::rng::Rng) -> Self {
        let pieces = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm: f64 = raw.iter().map(|c: &f64| c.abs()).sum::<f64>().max(1e-12);
                let target = l * rng.random_range(0.3..1.0);
                (rng.random_range(-1.0..1.0), raw.iter().map(|c| c * target / norm).collect())
            })
            .collect();
        Self { pieces }
    }

    fn eval(&self, x: &[f64], origin: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|(a, c)| a + c.iter().zip(x.iter().zip(origin)).map(|(c, (x, o))| c * (x - o)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            .clamp(-1.0, 1.0)
    }
}

/// Planted-outlier distribution satisfying Assumptions 1–3.
///
/// k centers in [0, 10kα]^d, pairwise more than 3α apart in ℓ∞. Each ball
/// (ℓ∞ diameter α) holds outliers with total mass ρ/k and non-outliers with
/// mass 1.5ρ/k (non-outlier fraction 0.6). Background non-outliers sit more
/// than α/2 from every center. Outliers get e or 1−e with e ∈ [β/100, β/20];
/// in-ball non-outliers get e ∈ [0.49, 0.51]; background points get e(1−e) ≥ β.
pub fn make_planted(spec: &PlantedSpec) -> Result<PlantedDistribution> {
    let PlantedSpec { d, k, alpha, beta, rho, lipschitz, seed, .. } = *spec;
    if d == 0 || !(alpha > 0.0) || !(beta > 0.0 && beta <= 0.25) || !(lipschitz > 0.0) {
        return Err(CipwError::Config("planted spec needs d >= 1, alpha > 0, beta in (0,1/4], L > 0".into()));
    }
    if k > 0 && !(rho > 0.0 && rho / PLANTED_INLIER_FRACTION * (1.0 - PLANTED_INLIER_FRACTION) < 1.0) {
        return Err(CipwError::Config(format!("rho = {rho} leaves no room for non-outlier mass")));
    }
    let ball_mass = if k > 0 { rho / (1.0 - PLANTED_INLIER_FRACTION) } else { 0.0 };
    if k > 0 && (spec.outliers_per_ball == 0 || spec.inliers_per_ball == 0) {
        return Err(CipwError::Config("balls need at least one outlier and one non-outlier".into()));
    }
    if ball_mass >= 1.0 || (ball_mass > 1.0 - 1e-9 && spec.background_points > 0) {
        return Err(CipwError::Config(format!("planted balls would carry mass {ball_mass}")));
    }
    if spec.background_points == 0 && (ball_mass - 1.0).abs() > 1e-12 {
        return Err(CipwError::Config("no background points to carry the remaining mass".into()));
    }
    let mut rng = rng_from(seed);
    let side = 10.0 * k.max(1) as f64 * alpha;
    let linf = |a: &[f64], b: &[f64]| Norm::Inf.dist(a, b);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut placed = false;
        for _ in 0..10_000 {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(alpha / 2.0..side - alpha / 2.0)).collect();
            if centers.iter().all(|o| linf(o, &c) > 3.0 * alpha) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CipwError::Geometry(format!("cannot place {k} centers pairwise 3*alpha apart")));
        }
    }

    let c_lo = (1.0 - (1.0 - 4.0 * beta).max(0.0).sqrt()) / 2.0;
    let bg_lo = c_lo + 0.25 * (0.5 - c_lo);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut mass = Vec::new();
    let mut e = Vec::new();
    let mut balls = Vec::new();
    let mut outliers = Vec::new();
    let per_ball = if k > 0 { ball_mass / k as f64 } else { 0.0 };
    let split = |total: f64, parts: usize, rng: &mut crate::rng::Rng| -> Vec<f64> {
        let w: Vec<f64> = (0..parts).map(|_| rng.random_range(0.5..1.5)).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| total * v / s).collect()
    };
    for c in &centers {
        let mut ids = Vec::new();
        let r = 0.499 * alpha;
        let out_mass = split(per_ball * (1.0 - PLANTED_INLIER_FRACTION), spec.outliers_per_ball, &mut rng);
        let in_mass = split(per_ball * PLANTED_INLIER_FRACTION, spec.inliers_per_ball, &mut rng);
        for (i, dm) in out_mass.iter().chain(&in_mass).enumerate() {
            ids.push(pts.len());
            pts.push(c.iter().map(|v| v + rng.random_range(-r..r)).collect());
            mass.push(*dm);
            if i < spec.outliers_per_ball {
                outliers.push(pts.len() - 1);
                let p = rng.random_range(beta / 100.0..beta / 20.0);
                e.push(if rng.random_bool(0.5) { p } else { 1.0 - p });
            } else {
                e.push(rng.random_range(0.49..0.51));
            }
        }
        balls.push(ids);
    }
    if spec.background_points > 0 {
        let bg_mass = split(1.0 - ball_mass, spec.background_points, &mut rng);
        for dm in bg_mass {
            let mut placed = false;
            for _ in 0..10_000 {
                let p: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..side)).collect();
                if centers.iter().all(|c| linf(c, &p) > alpha / 2.0) {
                    pts.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(CipwError::Geometry("cannot place background points outside the balls".into()));
            }
            mass.push(dm);
            e.push(rng.random_range(bg_lo..1.0 - bg_lo));
        }
    }
    // exact normalization against rounding in the splits
    let total: f64 = mass.iter().sum();
    for v in &mut mass {
        *v /= total;
    }

    let origin = vec![side / 2.0; d];
    let f0 = Field::random(d, lipschitz, &mut rng);
    let f1 = Field::random(d, lipschitz, &mut rng);
    let mu0: Vec<f64> = pts.iter().map(|p| f0.eval(p, &origin)).collect();
    let mu1: Vec<f64> = pts.iter().map(|p| f1.eval(p, &origin)).collect();
    let v0 = mu0.iter().map(|m| rng.random_range(0.0..1.0) * (1.0 - m * m)).collect();
    let v1 = mu1.iter().map(|m| rng.random_range(0.0..1.0) * (1.0 - m * m)).collect();
    let dist = build(pts, [mass, e, mu0, mu1, v0, v1])?;
    Ok(PlantedDistribution { dist, centers, balls, outliers })
}

/// Largest ratio |μ_t(x) − μ_t(z)| / ‖x − z‖∞ over support pairs.
pub fn lipschitz_ratio(dist: &FiniteDistribution) -> f64 {
    let p = dist.points();
    let mut best = 0.0f64;
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            let dx = Norm::Inf.dist(&p[a].coords, &p[b].coords);
            for mu in [dist.mu0(), dist.mu1()] {
                best = best.max((mu[a] - mu[b]).abs() / dx);
            }
        }
    }
    best
}

/// Two-point law on [−1, 1] with mean μ and variance v: returns
/// (low, high, P[high]).
pub fn outcome_law(mu: f64, v: f64) -> (f64, f64, f64) {
    if v <= 0.0 {
        return (mu, mu, 0.0);
    }
    let s = v.sqrt();
    if mu - s >= -1.0 && mu + s <= 1.0 {
        return (mu - s, mu + s, 0.5);
    }
    if mu >= 0.0 {
        let up = 1.0 - mu;
        if up <= 0.0 {
            return (mu, mu, 0.0);
        }
        let down = v / up;
        ((mu - down).max(-1.0), 1.0, down / (down + up))
    } else {
        let down = 1.0 + mu;
        if down <= 0.0 {
            return (mu, mu, 0.0);
        }
        let up = v / down;
        (-1.0, (mu + up).min(1.0), down / (down + up))
    }
}

/// Precomputed sampler for one distribution.
pub struct Sampler {
    pick: WeightedIndex<f64>,
    e: Vec<f64>,
    laws: Vec<[(f64, f64, f64); 2]>,
    support: crate::model::Support,
}

impl Sampler {
    pub fn new(dist: &FiniteDistribution) -> Result<Self> {
        dist.check_moment_feasible()?;
        let pick = WeightedIndex::new(dist.mass()).map_err(|e| CipwError::Data(e.to_string()))?;
        let laws = (0..dist.m())
            .map(|x| [outcome_law(dist.mu0()[x], dist.v0()[x]), outcome_law(dist.mu1()[x], dist.v1()[x])])
            .collect();
        Ok(Self { pick, e: dist.propensity().to_vec(), laws, support: dist.support() })
    }

    pub fn draw(&self, rng: &mut crate::rng::Rng) -> CensoredSample {
        let x = self.pick.sample(rng);
        let t = rng.random::<f64>() < self.e[x];
        let (lo, hi, p) = self.laws[x][t as usize];
        let y = if rng.random::<f64>() < p { hi } else { lo };
        CensoredSample { x, y, t }
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Result<CensoredDataset> {
        let mut rng = rng_from(seed);
        CensoredDataset::new(self.support.clone(), (0..n).map(|_| self.draw(&mut rng)).collect())
    }
}

/// n i.i.d. censored samples: x ~ D, t ~ Bernoulli(e(x)), y from the
/// two-point law with moments (μ_t(x), v_t(x)).
pub fn sample_dataset(dist: &FiniteDistribution, n: usize, seed: u64) -> Result<CensoredDataset> {
    Sampler::new(dist)?.dataset(n, seed)
}

/// Adversary used by `perturb_scores`.
#[derive(Clone, Copy, Debug)]
pub enum PerturbMode<'a> {
    /// Independent random corner ±ε per point.
    Random,
    /// Scores below 1/2 move down, above 1/2 move up, 1/2 stays.
    AntiOutlier,
    /// Each point moves in the direction that increases its IPW bias term,
    /// with the global sign chosen to maximize |bias|.
    WorstBias(&'a FiniteDistribution),
}

fn ipw_expectation(dist: &FiniteDistribution, hat: &[f64]) -> f64 {
    (0..dist.m())
        .map(|x| {
            let e = dist.propensity()[x];
            dist.mass()[x] * (e * dist.mu1()[x] / hat[x] - (1.0 - e) * dist.mu0()[x] / (1.0 - hat[x]))
        })
        .sum()
}

/// ê within ℓ∞ distance ε of e, clipped into (0,1).
pub fn perturb_scores(e: &PropensityMap, eps: f64, mode: PerturbMode<'_>, seed: u64) -> Result<PropensityMap> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CipwError::Config(format!("eps = {eps} must be finite and non-negative")));
    }
    let base = e.dense()?;
    let clip = |p: f64, q: f64| q.clamp(SCORE_CLIP.min(p), (1.0 - SCORE_CLIP).max(p));
    let apply = |dir: &dyn Fn(usize) -> f64| -> Result<PropensityMap> {
        let v = base.iter().enumerate().map(|(x, &p)| clip(p, p + dir(x) * eps)).collect();
        PropensityMap::new(v, ScoreLabel::Estimate)
    };
    if eps == 0.0 {
        return apply(&|_| 0.0);
    }
    match mode {
        PerturbMode::Random => {
            let mut rng = child_rng(seed, &[0x5eed]);
            let signs: Vec<f64> = (0..base.len()).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            apply(&|x| signs[x])
        }
        PerturbMode::AntiOutlier => apply(&|x| {
            let p = base[x];
            if p < 0.5 {
                -1.0
            } else if p > 0.5 {
                1.0
            } else {
                0.0
            }
        }),
        PerturbMode::WorstBias(dist) => {
            if dist.m() != base.len() {
                return Err(CipwError::Coverage("distribution and score map differ in size".into()));
            }
            let grad: Vec<f64> = (0..base.len())
                .map(|x| {
                    let p = base[x];
                    let g = -dist.mu1()[x] / p - dist.mu0()[x] / (1.0 - p);
                    if g > 0.0 {
                        1.0
                    } else if g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let tau = true_ate(dist);
            let up = apply(&|x| grad[x])?;
            let down = apply(&|x| -grad[x])?;
            let bu = (ipw_expectation(dist, &up.dense()?) - tau).abs();
            let bd = (ipw_expectation(dist, &down.dense()?) - tau).abs();
            Ok(if bd > bu { down } else { up })
        }
    }
}
