//! Brute-force ground truth: partition enumeration, exhaustive Min-RMSE,
//! and the Subset-Sum reduction in exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::model::{FiniteDistribution, Partition};
use crate::moments::cipw_moments;

pub type Q = BigRational;

/// Lazily yields every (S, N) over ids 0..m-1: each subset N (by bitmask)
/// and each set partition of the rest (restricted growth strings).
pub struct PartitionIter {
    m: usize,
    mask: u32,
    rest: Vec<usize>,
    rgs: Vec<usize>,
    fresh: bool,
}

impl PartitionIter {
    fn load_mask(&mut self) {
        self.rest = (0..self.m).filter(|&x| self.mask >> x & 1 == 0).collect();
        self.rgs = vec![0; self.rest.len()];
        self.fresh = true;
    }

    fn advance_rgs(&mut self) -> bool {
        let r = self.rgs.len();
        for i in (1..r).rev() {
            let mx = *self.rgs[..i].iter().max().unwrap();
            if self.rgs[i] <= mx {
                self.rgs[i] += 1;
                for v in &mut self.rgs[i + 1..] {
                    *v = 0;
                }
                return true;
            }
        }
        false
    }

    fn current(&self) -> Partition {
        let blocks = self.rgs.iter().copied().max().map_or(0, |b| b + 1);
        let mut sets = vec![Vec::new(); blocks];
        for (pos, &b) in self.rgs.iter().enumerate() {
            sets[b].push(self.rest[pos]);
        }
        let null = (0..self.m).filter(|&x| self.mask >> x & 1 == 1).collect();
        Partition::new(sets, null, self.m).expect("enumerated blocks form a partition")
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        loop {
            if self.mask >= 1 << self.m {
                return None;
            }
            if self.fresh {
                self.fresh = false;
                return Some(self.current());
            }
            if self.advance_rgs() {
                return Some(self.current());
            }
            self.mask += 1;
            if self.mask < 1 << self.m {
                self.load_mask();
            }
        }
    }
}

/// Every partition (S, N) of 0..m-1; Σ_j C(m,j)·Bell(m−j) items.
pub fn enumerate_partitions(m: usize) -> Result<PartitionIter> {
    if !(1..=10).contains(&m) {
        return Err(CipwError::Size(format!("enumeration supports 1 <= m <= 10, got {m}")));
    }
    let mut it = PartitionIter { m, mask: 0, rest: vec![], rgs: vec![], fresh: true };
    it.load_mask();
    Ok(it)
}

fn tie_key(p: &Partition) -> (usize, (Vec<Vec<usize>>, Vec<usize>)) {
    (p.sets().len(), p.canonical())
}

/// Minimum analytic MSE over all partitions with at least one set, using
/// the true scores. Ties go to fewer sets, then to the lexicographically
/// smaller canonical form.
pub fn brute_force_min_rmse(dist: &FiniteDistribution, n: u64) -> Result<(f64, Partition)> {
    let all: Vec<Partition> = enumerate_partitions(dist.m())?.filter(|p| !p.sets().is_empty()).collect();
    let scores = dist.scores();
    let scored = all
        .into_par_iter()
        .map(|p| cipw_moments(dist, &p, &scores, n).map(|r| (r.mse, p)))
        .collect::<Result<Vec<_>>>()?;
    scored
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| tie_key(&a.1).cmp(&tie_key(&b.1))))
        .ok_or_else(|| CipwError::Domain("no partition with a non-null set".into()))
}

/// Subset-Sum input: positive integers a and a target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSumInput {
    pub a: Vec<u64>,
    pub target: u64,
}

impl SubsetSumInput {
    pub fn new(a: Vec<u64>, target: u64) -> Result<Self> {
        if a.is_empty() || a.contains(&0) || target == 0 {
            return Err(CipwError::Config("Subset-Sum needs a nonempty list of positive integers and a positive target".into()));
        }
        Ok(Self { a, target })
    }

    pub fn total(&self) -> u64 {
        self.a.iter().sum()
    }

    /// Brute-force decision.
    pub fn is_yes(&self) -> bool {
        let k = self.a.len();
        (0u32..1 << k).any(|mask| (0..k).filter(|&i| mask >> i & 1 == 1).map(|i| self.a[i]).sum::<u64>() == self.target)
    }
}

/// Per-point parameters in exact arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalPoint {
    pub mass: Q,
    pub e: Q,
    pub mu0: Q,
    pub mu1: Q,
    pub v0: Q,
    pub v1: Q,
}

/// Min-RMSE instance produced by the reduction. Points 0..k-1 carry the
/// a_i, point k is x_{m−1} and point k+1 is x_m.
///
/// After the rescaling v1 = 4 − μ1² ∈ [3, 4] and e = 1 on the first k+1
/// points, so the instance lies outside `FiniteDistribution`'s ranges and
/// is kept in its own type.
#[derive(Clone, Debug, PartialEq)]
pub struct MinRmseInstance {
    pub input: SubsetSumInput,
    pub eps: Q,
    /// Whether ε is the default 1/(20(Am)^4) rather than an override.
    pub conforming: bool,
    pub u: Q,
    pub n: Q,
    pub points: Vec<RationalPoint>,
}

impl MinRmseInstance {
    pub fn m(&self) -> usize {
        self.points.len()
    }
    pub fn k(&self) -> usize {
        self.input.a.len()
    }
}

fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

fn pow(x: &Q, k: i32) -> Q {
    num_traits::pow::Pow::pow(x, k)
}

/// ε = 1/(20·(A·m)^4).
pub fn default_reduction_eps(input: &SubsetSumInput) -> Q {
    let am = q((input.total() * (input.a.len() as u64 + 2)) as i64);
    Q::one() / (q(20) * pow(&am, 4))
}

/// Builds the Min-RMSE instance of a Subset-Sum input: A = Σa_i, m = k+2,
/// α = ε³, β = ε⁵, Δ = 1/(1 + ε + kε³), n = ε⁻⁷, U = 8A²ε⁷, then μ1 /= A
/// and v1, U /= A².
pub fn subset_sum_reduce(input: &SubsetSumInput, eps_override: Option<Q>) -> Result<MinRmseInstance> {
    let conforming = eps_override.is_none();
    let eps = eps_override.unwrap_or_else(|| default_reduction_eps(input));
    if !(eps.is_positive() && eps < Q::one()) {
        return Err(CipwError::Config("reduction epsilon must lie in (0,1)".into()));
    }
    let k = input.a.len();
    let a_tot = q(input.total() as i64);
    let alpha = pow(&eps, 3);
    let beta = pow(&eps, 5);
    let delta = Q::one() / (Q::one() + &eps + q(k as i64) * &alpha);
    let n = Q::one() / pow(&eps, 7);
    let u = q(8) * &a_tot * &a_tot * pow(&eps, 7);
    let four_a2 = q(4) * &a_tot * &a_tot;
    let t = q(input.target as i64);

    let mut raw: Vec<(Q, Q, Q)> = Vec::with_capacity(k + 2);
    for &ai in &input.a {
        raw.push((&delta * &alpha, Q::one(), q(ai as i64)));
    }
    raw.push((delta.clone(), Q::one(), q(2) * &a_tot * &alpha));
    let mu_m = ((&t + q(2) * &a_tot) / &delta - q(3) * &a_tot) * &alpha / &eps;
    raw.push((&delta * &eps, beta, mu_m));

    let a2 = &a_tot * &a_tot;
    let points = raw
        .into_iter()
        .map(|(mass, e, mu1)| {
            let v1 = &four_a2 - &mu1 * &mu1;
            RationalPoint { mass, e, mu0: Q::zero(), mu1: mu1 / &a_tot, v0: Q::zero(), v1: v1 / &a2 }
        })
        .collect();
    Ok(MinRmseInstance { input: input.clone(), eps, conforming, u: u / a2, n, points })
}

/// Exact MSE of the CIPW estimator of `part` on a rational instance, with
/// the N-excluded, 1/(1 − D(N))-normalized moment formula. Terms whose
/// numerator vanishes are skipped, so e(S) = 1 is allowed when μ0 = v0 = 0.
pub fn exact_mse(inst: &MinRmseInstance, part: &Partition) -> Result<Q> {
    exact_mse_points(&inst.points, &inst.n, part)
}

pub fn exact_mse_points(points: &[RationalPoint], n: &Q, part: &Partition) -> Result<Q> {
    if part.m() != points.len() {
        return Err(CipwError::Coverage("partition and instance differ in size".into()));
    }
    if part.sets().is_empty() {
        return Err(CipwError::Domain("every point lies in the null set".into()));
    }
    let tau: Q = points.iter().map(|p| &p.mass * (&p.mu1 - &p.mu0)).sum();
    let kept: Q = part.sets().iter().flatten().map(|&x| points[x].mass.clone()).sum();
    let mut first = Q::zero();
    let mut second = Q::zero();
    for s in part.sets() {
        let ds: Q = s.iter().map(|&x| points[x].mass.clone()).sum();
        let es = s.iter().map(|&x| &points[x].e * &points[x].mass).sum::<Q>() / &ds;
        let cs = Q::one() - &es;
        for &x in s {
            let p = &points[x];
            let ce = Q::one() - &p.e;
            let t1 = &p.e * &p.mu1;
            let t0 = &ce * &p.mu0;
            let s1 = &p.e * (&p.v1 + &p.mu1 * &p.mu1);
            let s0 = &ce * (&p.v0 + &p.mu0 * &p.mu0);
            let div = |num: &Q, den: &Q| -> Result<Q> {
                if num.is_zero() {
                    Ok(Q::zero())
                } else if den.is_zero() {
                    Err(CipwError::Domain("coarse score at the boundary with a nonzero term".into()))
                } else {
                    Ok(num / den)
                }
            };
            first += &p.mass * (div(&t1, &es)? - div(&t0, &cs)?);
            second += &p.mass * (div(&s1, &(&es * &es))? + div(&s0, &(&cs * &cs))?);
        }
    }
    first /= &kept;
    second /= &kept;
    let bias = &first - &tau;
    Ok(&bias * &bias + (second - &first * &first) / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionCheck {
    pub mse_of_certificate: Q,
    pub leq_u: bool,
}

/// The certificate partition S = {R ∪ {x_{m−1}}}, N = {x_m} ∪ ([k] \ R),
/// for R given as 0-based indices into a.
pub fn certificate_partition(inst: &MinRmseInstance, certificate: &[usize]) -> Result<Partition> {
    let k = inst.k();
    if certificate.iter().any(|&i| i >= k) {
        return Err(CipwError::Config(format!("certificate index outside 0..{k}")));
    }
    let mut set: Vec<usize> = certificate.to_vec();
    set.sort_unstable();
    set.dedup();
    set.push(k);
    let null: Vec<usize> = (0..k).filter(|i| !set.contains(i)).chain([k + 1]).collect();
    Partition::new(vec![set], null, k + 2)
}

/// Evaluates the certificate partition exactly and compares with U.
pub fn verify_reduction(inst: &MinRmseInstance, certificate: &[usize]) -> Result<ReductionCheck> {
    let mse = exact_mse(inst, &certificate_partition(inst, certificate)?)?;
    let leq_u = mse <= inst.u;
    Ok(ReductionCheck { mse_of_certificate: mse, leq_u })
}

/// Exact minimum MSE over every partition with at least one set.
pub fn brute_force_min_mse_exact(inst: &MinRmseInstance) -> Result<(Q, Partition)> {
    let all: Vec<Partition> = enumerate_partitions(inst.m())?.filter(|p| !p.sets().is_empty()).collect();
    let scored = all
        .into_par_iter()
        .map(|p| exact_mse(inst, &p).map(|v| (v, p)))
        .collect::<Result<Vec<_>>>()?;
    scored
        .into_iter()
        .min_by(|a, b| a.0.cmp(&b.0).then_with(|| tie_key(&a.1).cmp(&tie_key(&b.1))))
        .ok_or_else(|| CipwError::Domain("no partition with a non-null set".into()))
}

/// Exact check of MSE > U/√ε, evaluated as MSE²·ε > U².
pub fn exceeds_gap(mse: &Q, u: &Q, eps: &Q) -> bool {
    mse.is_positive() && mse * mse * eps > u * u
}

/// 1 − (1 − ρη)^n: probability that n samples contain a treated draw of a
/// point with mass ρ and propensity η.
pub fn treated_draw_probability(rho: &Q, eta: &Q, n: u32) -> Q {
    let stay = Q::one() - rho * eta;
    Q::one() - num_traits::pow::Pow::pow(&stay, n)
}

/// "p/q" rendering with an explicit denominator.
pub fn q_to_string(v: &Q) -> String {
    format!("{}/{}", v.numer(), v.denom())
}

/// Parses "p/q" or an integer.
pub fn q_from_str(s: &str) -> Result<Q> {
    let bad = || CipwError::Config(format!("cannot parse rational {s:?}"));
    let (p, d) = match s.split_once('/') {
        Some((p, d)) => (p.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let p: BigInt = p.parse().map_err(|_| bad())?;
    let d: BigInt = d.parse().map_err(|_| bad())?;
    if d.is_zero() {
        return Err(bad());
    }
    Ok(Q::new(p, d))
}

/// Lossy conversion for reporting.
pub fn q_to_f64(v: &Q) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or(f64::NAN)
}

#[derive(Serialize)]
struct PointJson {
    mass: String,
    e: String,
    mu0: String,
    mu1: String,
    v0: String,
    v1: String,
}

#[derive(Serialize)]
struct InstanceJson<'a> {
    a: &'a [u64],
    target: u64,
    m: usize,
    eps: String,
    conforming: bool,
    threshold_u: String,
    n: String,
    points: Vec<PointJson>,
}

impl MinRmseInstance {
    /// JSON with every rational as a "p/q" string.
    pub fn to_json(&self) -> serde_json::Value {
        let s = q_to_string;
        let j = InstanceJson {
            a: &self.input.a,
            target: self.input.target,
            m: self.m(),
            eps: s(&self.eps),
            conforming: self.conforming,
            threshold_u: s(&self.u),
            n: s(&self.n),
            points: self
                .points
                .iter()
                .map(|p| PointJson { mass: s(&p.mass), e: s(&p.e), mu0: s(&p.mu0), mu1: s(&p.mu1), v0: s(&p.v0), v1: s(&p.v1) })
                .collect(),
        };
        serde_json::to_value(j).expect("instance serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_lem_c1;
    use std::collections::HashSet;

    // each element goes to N, to one of `blocks` open blocks, or opens a new one
    fn count(left: usize, blocks: u64) -> u64 {
        if left == 0 {
            return 1;
        }
        count(left - 1, blocks) + blocks * count(left - 1, blocks) + count(left - 1, blocks + 1)
    }

    fn q(s: &str) -> Q {
        q_from_str(s).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        let got: Vec<usize> = (1..=7).map(|m| enumerate_partitions(m).unwrap().count()).collect();
        assert_eq!(got[..5], [2, 5, 15, 52, 203]);
        for (i, &c) in got.iter().enumerate() {
            assert_eq!(c as u64, count(i + 1, 0));
        }
        assert!(matches!(enumerate_partitions(0), Err(CipwError::Size(_))));
        assert!(matches!(enumerate_partitions(11), Err(CipwError::Size(_))));
    }

    #[test]
    fn enumeration_is_distinct_and_m1_is_exact() {
        let all: Vec<_> = enumerate_partitions(1).unwrap().map(|p| p.canonical()).collect();
        assert_eq!(all, vec![(vec![vec![0]], vec![]), (vec![], vec![0])]);
        let seen: HashSet<_> = enumerate_partitions(5).unwrap().map(|p| p.canonical()).collect();
        assert_eq!(seen.len(), 203);
    }

    #[test]
    fn brute_force_prefers_merging_on_lem_c1() {
        let d = make_lem_c1(0.001).unwrap();
        let n = 100;
        let (best, part) = brute_force_min_rmse(&d, n).unwrap();
        let single = cipw_moments(&d, &Partition::singletons(2), &d.scores(), n).unwrap().mse;
        let merged = cipw_moments(&d, &Partition::merged(2), &d.scores(), n).unwrap().mse;
        assert!(merged * 50.0 < single);
        assert!(merged * n as f64 <= 4.0);
        assert!(best <= merged);
        assert!(exact_zero_bias(&d, &part));
    }

    fn exact_zero_bias(d: &FiniteDistribution, p: &Partition) -> bool {
        cipw_moments(d, p, &d.scores(), 1).unwrap().bias < 1e-12
    }

    #[test]
    fn brute_force_ties_go_to_fewer_sets() {
        let pts = crate::model::make_support(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let d = FiniteDistribution::new(
            pts,
            vec![1.0 / 3.0; 3],
            vec![0.4; 3],
            vec![0.1; 3],
            vec![0.3; 3],
            vec![0.2; 3],
            vec![0.2; 3],
            crate::model::Norm::Inf,
        )
        .unwrap();
        let (best, part) = brute_force_min_rmse(&d, 20).unwrap();
        let single = cipw_moments(&d, &Partition::singletons(3), &d.scores(), 20).unwrap().mse;
        assert!((best - single).abs() <= 1e-15);
        assert_eq!(part.sets().len(), 1);
    }

    #[test]
    fn reduction_point_values() {
        let inst = subset_sum_reduce(&SubsetSumInput::new(vec![1], 1).unwrap(), None).unwrap();
        let eps = inst.eps.clone();
        let alpha = &eps * &eps * &eps;
        let delta = Q::one() / (Q::one() + &eps + &alpha);
        let p0 = &inst.points[0];
        assert_eq!(p0.mass, &delta * &alpha);
        assert_eq!(p0.e, Q::one());
        assert_eq!(p0.mu1, Q::one());
        assert_eq!(p0.v1, q("3"));
        assert_eq!(inst.m(), 3);
        assert_eq!(eps, q("1/1620"));
    }

    #[test]
    fn reduction_last_point_and_mass() {
        for (a, t) in [(vec![1, 2, 3], 3), (vec![2, 2], 3), (vec![5, 1, 4, 2], 7)] {
            let inst = subset_sum_reduce(&SubsetSumInput::new(a, t).unwrap(), Some(q("1/7"))).unwrap();
            let last = inst.points.last().unwrap();
            let e = &inst.eps;
            let k = inst.k() as i64;
            let delta = Q::one() / (Q::one() + e + Q::from_integer(k.into()) * e * e * e);
            assert_eq!(last.e, e * e * e * e * e);
            assert_eq!(last.mass, &delta * e);
            let total: Q = inst.points.iter().map(|p| p.mass.clone()).sum();
            assert_eq!(total, Q::one());
            assert!(!inst.conforming);
        }
    }

    #[test]
    fn certificates() {
        let inst = subset_sum_reduce(&SubsetSumInput::new(vec![1, 2, 3], 3).unwrap(), None).unwrap();
        assert!(verify_reduction(&inst, &[2]).unwrap().leq_u);
        assert!(verify_reduction(&inst, &[0, 1]).unwrap().leq_u);
        assert!(!verify_reduction(&inst, &[]).unwrap().leq_u);
        assert!(!verify_reduction(&inst, &[0]).unwrap().leq_u);
        assert!(verify_reduction(&inst, &[3]).is_err());
    }

    #[test]
    fn no_instance_exceeds_threshold_everywhere() {
        let inst = subset_sum_reduce(&SubsetSumInput::new(vec![2, 2], 3).unwrap(), None).unwrap();
        for p in enumerate_partitions(inst.m()).unwrap().filter(|p| !p.sets().is_empty()) {
            let mse = exact_mse(&inst, &p).unwrap();
            assert!(mse > inst.u, "{:?}", p.canonical());
        }
        let (best, _) = brute_force_min_mse_exact(&inst).unwrap();
        assert!(exceeds_gap(&best, &inst.u, &inst.eps));
    }

    #[test]
    fn exact_mse_matches_float_moments() {
        let d = make_lem_c1(0.1).unwrap();
        let pts: Vec<RationalPoint> = (0..2)
            .map(|x| {
                let r = |v: f64| Q::from_float(v).unwrap();
                RationalPoint {
                    mass: r(d.mass()[x]),
                    e: r(d.propensity()[x]),
                    mu0: r(d.mu0()[x]),
                    mu1: r(d.mu1()[x]),
                    v0: r(d.v0()[x]),
                    v1: r(d.v1()[x]),
                }
            })
            .collect();
        let n = Q::from_integer(30.into());
        for p in enumerate_partitions(2).unwrap().filter(|p| !p.sets().is_empty()) {
            let exact = q_to_f64(&exact_mse_points(&pts, &n, &p).unwrap());
            let float = cipw_moments(&d, &p, &d.scores(), 30).unwrap().mse;
            assert!((exact - float).abs() <= 1e-12 * float.max(1.0));
        }
    }

    #[test]
    fn treated_probability() {
        assert_eq!(treated_draw_probability(&q("1/2"), &q("1/2"), 2), q("7/16"));
        assert_eq!(treated_draw_probability(&q("1/3"), &q("1/10"), 0), Q::zero());
    }

    #[test]
    fn rational_strings() {
        assert_eq!(q_to_string(&q("6/4")), "3/2");
        assert_eq!(q_to_string(&q("5")), "5/1");
        assert_eq!(q(" -2 / 8 "), q("-1/4"));
        assert!(q_from_str("1/0").is_err());
        assert!(q_from_str("x").is_err());
    }

    #[test]
    fn subset_sum_decision() {
        assert!(SubsetSumInput::new(vec![1, 2, 3], 3).unwrap().is_yes());
        assert!(!SubsetSumInput::new(vec![2, 2], 3).unwrap().is_yes());
        assert!(SubsetSumInput::new(vec![], 3).is_err());
        assert!(SubsetSumInput::new(vec![0, 1], 1).is_err());
    }
}
