//! Domain types: finite-support distributions, censored datasets, propensity
//! maps, hard and fractional partitions, and the basic measure queries.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CipwError, Result};

/// Row-sum tolerance for masses and fractional weights.
pub const MASS_TOL: f64 = 1e-12;

/// The ℓ_p norm used for diameters and balls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Norm {
    L1,
    L2,
    #[default]
    Inf,
}

impl Norm {
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        let it = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::L1 => it.sum(),
            Norm::L2 => it.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::Inf => it.fold(0.0, f64::max),
        }
    }
}

impl Serialize for Norm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Norm::L1 => s.serialize_u64(1),
            Norm::L2 => s.serialize_u64(2),
            Norm::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Norm;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("1, 2 or \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Norm, E> {
                match v {
                    1 => Ok(Norm::L1),
                    2 => Ok(Norm::L2),
                    _ => Err(E::custom(format!("unsupported norm p = {v}"))),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Norm, E> {
                if v < 0 {
                    return Err(E::custom("negative norm"));
                }
                self.visit_u64(v as u64)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Norm, E> {
                if v == 1.0 {
                    Ok(Norm::L1)
                } else if v == 2.0 {
                    Ok(Norm::L2)
                } else if v.is_infinite() && v > 0.0 {
                    Ok(Norm::Inf)
                } else {
                    Err(E::custom(format!("unsupported norm p = {v}")))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Norm, E> {
                match v {
                    "inf" | "Inf" | "infinity" => Ok(Norm::Inf),
                    "1" => Ok(Norm::L1),
                    "2" => Ok(Norm::L2),
                    _ => Err(E::custom(format!("unsupported norm p = {v}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// A point of the covariate space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub id: usize,
    pub coords: Vec<f64>,
}

/// Shared, immutable list of covariates indexed by id.
pub type Support = Arc<Vec<Covariate>>;

fn coord_key(c: &[f64]) -> Vec<u64> {
    // +0.0 folds -0.0 onto 0.0
    c.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Builds a support from raw coordinates, assigning ids 0..m-1.
pub fn make_support(coords: Vec<Vec<f64>>) -> Result<Support> {
    let pts: Vec<Covariate> = coords
        .into_iter()
        .enumerate()
        .map(|(id, coords)| Covariate { id, coords })
        .collect();
    check_support(&pts)?;
    Ok(Arc::new(pts))
}

fn check_support(points: &[Covariate]) -> Result<()> {
    let d = points.first().map(|p| p.coords.len()).unwrap_or(1);
    if d == 0 {
        return Err(CipwError::Data("covariate dimension must be at least 1".into()));
    }
    let mut seen = HashSet::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if p.id != i {
            return Err(CipwError::Data(format!("covariate at position {i} has id {}", p.id)));
        }
        if p.coords.len() != d {
            return Err(CipwError::Data(format!("covariate {i} has dimension {}, expected {d}", p.coords.len())));
        }
        if p.coords.iter().any(|v| !v.is_finite()) {
            return Err(CipwError::Data(format!("covariate {i} has non-finite coordinates")));
        }
        if !seen.insert(coord_key(&p.coords)) {
            return Err(CipwError::Data(format!("covariate {i} repeats an earlier coordinate vector")));
        }
    }
    Ok(())
}

/// JSON layout of a distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    pub points: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub e: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    #[serde(default)]
    pub p: Norm,
}

/// Finite-support unconfounded distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDistribution {
    points: Support,
    mass: Vec<f64>,
    e: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    v0: Vec<f64>,
    v1: Vec<f64>,
    norm: Norm,
}

impl FiniteDistribution {
    pub fn from_spec(spec: DistSpec) -> Result<Self> {
        let points = make_support(spec.points)?;
        Self::new(points, spec.mass, spec.e, spec.mu0, spec.mu1, spec.v0, spec.v1, spec.p)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        points: Support,
        mass: Vec<f64>,
        e: Vec<f64>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        v0: Vec<f64>,
        v1: Vec<f64>,
        norm: Norm,
    ) -> Result<Self> {
        check_support(&points)?;
        let m = points.len();
        if m == 0 {
            return Err(CipwError::Data("empty support".into()));
        }
        for (name, v) in [("mass", &mass), ("e", &e), ("mu0", &mu0), ("mu1", &mu1), ("v0", &v0), ("v1", &v1)] {
            if v.len() != m {
                return Err(CipwError::Data(format!("{name} has {} entries, support has {m}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CipwError::Data(format!("{name} has non-finite entries")));
            }
        }
        if let Some(i) = mass.iter().position(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(CipwError::Data(format!("mass[{i}] = {} outside (0,1]", mass[i])));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(CipwError::Data(format!("masses sum to {total}")));
        }
        if let Some(i) = e.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(CipwError::Data(format!("e[{i}] = {} outside (0,1)", e[i])));
        }
        for (name, v) in [("mu0", &mu0), ("mu1", &mu1)] {
            if let Some(i) = v.iter().position(|x| !(-1.0..=1.0).contains(x)) {
                return Err(CipwError::Data(format!("{name}[{i}] = {} outside [-1,1]", v[i])));
            }
        }
        for (name, v) in [("v0", &v0), ("v1", &v1)] {
            if let Some(i) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
                return Err(CipwError::Data(format!("{name}[{i}] = {} outside [0,1]", v[i])));
            }
        }
        Ok(Self { points, mass, e, mu0, mu1, v0, v1, norm })
    }

    pub fn to_spec(&self) -> DistSpec {
        DistSpec {
            points: self.points.iter().map(|p| p.coords.clone()).collect(),
            mass: self.mass.clone(),
            e: self.e.clone(),
            mu0: self.mu0.clone(),
            mu1: self.mu1.clone(),
            v0: self.v0.clone(),
            v1: self.v1.clone(),
            p: self.norm,
        }
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }
    pub fn dim(&self) -> usize {
        self.points[0].coords.len()
    }
    pub fn points(&self) -> &[Covariate] {
        &self.points
    }
    pub fn support(&self) -> Support {
        Arc::clone(&self.points)
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn propensity(&self) -> &[f64] {
        &self.e
    }
    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }
    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }
    pub fn v0(&self) -> &[f64] {
        &self.v0
    }
    pub fn v1(&self) -> &[f64] {
        &self.v1
    }
    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// The true propensity scores as a map.
    pub fn scores(&self) -> PropensityMap {
        PropensityMap { values: self.e.iter().map(|&v| Some(v)).collect(), label: ScoreLabel::True }
    }

    /// Checks that every (μ_t, v_t) pair admits an outcome law on [-1,1],
    /// i.e. v ≤ (1-μ)(1+μ).
    pub fn check_moment_feasible(&self) -> Result<()> {
        for x in 0..self.m() {
            for (t, mu, v) in [(0, self.mu0[x], self.v0[x]), (1, self.mu1[x], self.v1[x])] {
                if v > (1.0 - mu) * (1.0 + mu) + MASS_TOL {
                    return Err(CipwError::Feasibility(format!(
                        "point {x}, arm {t}: variance {v} exceeds (1-mu)(1+mu) for mu = {mu}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy with every v_t capped at (1-μ_t)(1+μ_t).
    pub fn with_feasible_variances(&self) -> Self {
        let cap = |mu: &[f64], v: &[f64]| -> Vec<f64> {
            mu.iter().zip(v).map(|(&m, &v)| v.min(((1.0 - m) * (1.0 + m)).max(0.0))).collect()
        };
        let mut out = self.clone();
        out.v0 = cap(&self.mu0, &self.v0);
        out.v1 = cap(&self.mu1, &self.v1);
        out
    }

    /// Copy with a different propensity vector.
    pub fn with_propensity(&self, e: Vec<f64>) -> Result<Self> {
        Self::new(self.support(), self.mass.clone(), e, self.mu0.clone(), self.mu1.clone(), self.v0.clone(), self.v1.clone(), self.norm)
    }

    /// Copy with different conditional moments.
    pub fn with_outcomes(&self, mu0: Vec<f64>, mu1: Vec<f64>, v0: Vec<f64>, v1: Vec<f64>) -> Result<Self> {
        Self::new(self.support(), self.mass.clone(), self.e.clone(), mu0, mu1, v0, v1, self.norm)
    }
}

/// τ = Σ_x D(x)(μ1(x) − μ0(x)).
pub fn true_ate(dist: &FiniteDistribution) -> f64 {
    (0..dist.m()).map(|x| dist.mass[x] * (dist.mu1[x] - dist.mu0[x])).sum()
}

/// Whether a map holds the true scores or an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreLabel {
    True,
    Estimate,
}

/// Per-covariate propensity values, indexed by covariate id. Entries may be
/// missing when the map was read from a dataset that never saw the point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityMap {
    values: Vec<Option<f64>>,
    label: ScoreLabel,
}

impl PropensityMap {
    pub fn new(values: Vec<f64>, label: ScoreLabel) -> Result<Self> {
        Self::partial(values.into_iter().map(Some).collect(), label)
    }

    pub fn partial(values: Vec<Option<f64>>, label: ScoreLabel) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| matches!(v, Some(p) if !(*p > 0.0 && *p < 1.0))) {
            return Err(CipwError::Data(format!("score for covariate {i} = {:?} outside (0,1)", values[i])));
        }
        Ok(Self { values, label })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn label(&self) -> ScoreLabel {
        self.label
    }
    pub fn raw(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, id: usize) -> Result<f64> {
        self.values
            .get(id)
            .copied()
            .flatten()
            .ok_or_else(|| CipwError::Lookup(format!("no propensity score for covariate {id}")))
    }

    /// All values, failing if any entry is missing.
    pub fn dense(&self) -> Result<Vec<f64>> {
        (0..self.values.len()).map(|i| self.get(i)).collect()
    }

    /// Largest absolute difference over ids present in both maps.
    pub fn max_abs_diff(&self, other: &PropensityMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
            .fold(0.0, f64::max)
    }
}

/// The ℓ∞ ball B(e, ε) of propensity maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBall {
    pub center: PropensityMap,
    pub radius: f64,
}

impl PerturbationBall {
    /// Accepts any ε ≥ 0; perturbed scores are clipped into (0,1).
    pub fn new(center: PropensityMap, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(CipwError::Config(format!("radius {radius} must be finite and non-negative")));
        }
        center.dense()?;
        Ok(Self { center, radius })
    }

    /// Additionally requires ε < min_x min(e(x), 1 − e(x)).
    pub fn strict(center: PropensityMap, radius: f64) -> Result<Self> {
        let ball = Self::new(center, radius)?;
        if !ball.is_strict() {
            return Err(CipwError::Config(format!("radius {radius} reaches the boundary of (0,1)")));
        }
        Ok(ball)
    }

    pub fn is_strict(&self) -> bool {
        self.radius == 0.0
            || self.center.values.iter().flatten().all(|&p| self.radius < p.min(1.0 - p))
    }
}

/// A member of S ∪ {N}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cell {
    Set(usize),
    Null,
}

/// Hard partition (S, N) over covariate ids 0..m-1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    sets: Vec<Vec<usize>>,
    null_set: Vec<usize>,
    cell: Vec<Cell>,
}

impl Partition {
    pub fn new(sets: Vec<Vec<usize>>, null_set: Vec<usize>, m: usize) -> Result<Self> {
        let mut cell = vec![None; m];
        let mut place = |x: usize, c: Cell| -> Result<()> {
            if x >= m {
                return Err(CipwError::Coverage(format!("id {x} outside support of size {m}")));
            }
            if cell[x].is_some() {
                return Err(CipwError::Coverage(format!("id {x} appears twice")));
            }
            cell[x] = Some(c);
            Ok(())
        };
        for (j, s) in sets.iter().enumerate() {
            if s.is_empty() {
                return Err(CipwError::Coverage(format!("set {j} is empty")));
            }
            for &x in s {
                place(x, Cell::Set(j))?;
            }
        }
        for &x in &null_set {
            place(x, Cell::Null)?;
        }
        let cell = cell
            .into_iter()
            .enumerate()
            .map(|(x, c)| c.ok_or_else(|| CipwError::Coverage(format!("id {x} not covered"))))
            .collect::<Result<Vec<_>>>()?;
        let mut sets = sets;
        for s in &mut sets {
            s.sort_unstable();
        }
        let mut null_set = null_set;
        null_set.sort_unstable();
        Ok(Self { sets, null_set, cell })
    }

    /// Every point its own set, N = ∅.
    pub fn singletons(m: usize) -> Self {
        Self::new((0..m).map(|x| vec![x]).collect(), vec![], m).expect("singletons are a partition")
    }

    /// One set holding the whole support.
    pub fn merged(m: usize) -> Self {
        Self::new(vec![(0..m).collect()], vec![], m).expect("merged support is a partition")
    }

    pub fn m(&self) -> usize {
        self.cell.len()
    }
    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }
    pub fn null_set(&self) -> &[usize] {
        &self.null_set
    }
    pub fn cell_of(&self, x: usize) -> Option<Cell> {
        self.cell.get(x).copied()
    }

    /// Blocks sorted by smallest member, for order-insensitive comparison.
    pub fn canonical(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut s = self.sets.clone();
        s.sort();
        (s, self.null_set.clone())
    }
}

/// Fractional partition (S, N, w): every covariate carries a probability
/// vector over S ∪ {N}.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalPartition {
    num_sets: usize,
    rows: Vec<Vec<(Cell, f64)>>,
}

impl FractionalPartition {
    /// `rows[x]` lists the positive weights of covariate x.
    pub fn new(num_sets: usize, rows: Vec<Vec<(Cell, f64)>>) -> Result<Self> {
        let mut used = vec![false; num_sets];
        let mut clean = Vec::with_capacity(rows.len());
        for (x, row) in rows.into_iter().enumerate() {
            let mut r: Vec<(Cell, f64)> = Vec::with_capacity(row.len());
            let mut total = 0.0;
            for (c, w) in row {
                if !(0.0..=1.0).contains(&w) {
                    return Err(CipwError::Coverage(format!("weight {w} of covariate {x} outside [0,1]")));
                }
                if let Cell::Set(j) = c {
                    if j >= num_sets {
                        return Err(CipwError::Coverage(format!("covariate {x} references set {j} of {num_sets}")));
                    }
                }
                if r.iter().any(|(c2, _)| *c2 == c) {
                    return Err(CipwError::Coverage(format!("covariate {x} lists {c:?} twice")));
                }
                total += w;
                if w > 0.0 {
                    if let Cell::Set(j) = c {
                        used[j] = true;
                    }
                    r.push((c, w));
                }
            }
            if (total - 1.0).abs() > MASS_TOL {
                return Err(CipwError::Coverage(format!("weights of covariate {x} sum to {total}")));
            }
            r.sort_by(|a, b| a.0.cmp(&b.0));
            clean.push(r);
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return Err(CipwError::Coverage(format!("set {j} has empty support")));
        }
        Ok(Self { num_sets, rows: clean })
    }

    pub fn from_partition(p: &Partition) -> Self {
        let rows = (0..p.m()).map(|x| vec![(p.cell_of(x).unwrap(), 1.0)]).collect();
        Self { num_sets: p.sets().len(), rows }
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }
    pub fn num_sets(&self) -> usize {
        self.num_sets
    }
    pub fn row(&self, x: usize) -> Option<&[(Cell, f64)]> {
        self.rows.get(x).map(|r| r.as_slice())
    }
    pub fn weight(&self, x: usize, c: Cell) -> f64 {
        self.rows[x].iter().find(|(c2, _)| *c2 == c).map(|p| p.1).unwrap_or(0.0)
    }

    /// {x : w_T(x) > 0}.
    pub fn support_of(&self, c: Cell) -> Vec<usize> {
        (0..self.m()).filter(|&x| self.weight(x, c) > 0.0).collect()
    }

    /// Covariates whose whole weight sits in one cell.
    pub fn hard_cell(&self, x: usize) -> Option<Cell> {
        match self.rows[x].as_slice() {
            [(c, w)] if *w == 1.0 => Some(*c),
            _ => None,
        }
    }

    /// Max over x of |Σ_T w_T(x) − 1|.
    pub fn row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|p| p.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// One weighted copy of a covariate on the extended domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedCopy {
    pub x: usize,
    pub cell: Cell,
    pub w: f64,
}

/// Common view of hard and fractional partitions as weighted copies.
pub trait Coarsening {
    fn support_size(&self) -> usize;
    fn set_count(&self) -> usize;
    fn copies(&self) -> Vec<WeightedCopy>;
}

impl Coarsening for Partition {
    fn support_size(&self) -> usize {
        self.m()
    }
    fn set_count(&self) -> usize {
        self.sets.len()
    }
    fn copies(&self) -> Vec<WeightedCopy> {
        (0..self.m()).map(|x| WeightedCopy { x, cell: self.cell[x], w: 1.0 }).collect()
    }
}

impl Coarsening for FractionalPartition {
    fn support_size(&self) -> usize {
        self.m()
    }
    fn set_count(&self) -> usize {
        self.num_sets
    }
    fn copies(&self) -> Vec<WeightedCopy> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(x, r)| r.iter().map(move |&(cell, w)| WeightedCopy { x, cell, w }))
            .collect()
    }
}

/// O(β; scores) = {x : s(x)(1 − s(x)) < β}; entries without a score are skipped.
pub fn outlier_set(scores: &PropensityMap, beta: f64) -> Result<BTreeSet<usize>> {
    if !(beta > 0.0 && beta <= 0.25) {
        return Err(CipwError::Config(format!("beta = {beta} outside (0, 1/4]")));
    }
    Ok(scores
        .values
        .iter()
        .enumerate()
        .filter_map(|(x, v)| v.filter(|p| p * (1.0 - p) < beta).map(|_| x))
        .collect())
}

/// Σ_{x∈set} w(x)·D(x); `weights` is aligned with `set`.
pub fn set_mass(dist: &FiniteDistribution, set: &[usize], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => set.iter().map(|&x| dist.mass[x]).sum(),
        Some(w) => set.iter().zip(w).map(|(&x, &w)| w * dist.mass[x]).sum(),
    }
}

/// Mass-weighted mean of `scores` over a (weighted) set.
pub fn coarse_score(mass: &[f64], scores: &[f64], set: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &x) in set.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]) * mass[x];
        num += w * scores[x];
        den += w;
    }
    if den <= 0.0 {
        return Err(CipwError::Domain("coarse score of a zero-mass set".into()));
    }
    Ok(num / den)
}

/// e(S) = Σ_{x∈S} e(x)D(x) / D(S), with D replaced by w_S·D when weighted.
pub fn coarse_propensity(dist: &FiniteDistribution, set: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    coarse_score(&dist.mass, &dist.e, set, weights)
}

/// Largest pairwise distance within `set`; 0 for singletons.
pub fn diameter(points: &[Covariate], set: &[usize], norm: Norm) -> Result<f64> {
    if set.is_empty() {
        return Err(CipwError::Domain("diameter of an empty set".into()));
    }
    let mut best = 0.0f64;
    for (i, &a) in set.iter().enumerate() {
        for &b in &set[i + 1..] {
            best = best.max(norm.dist(&points[a].coords, &points[b].coords));
        }
    }
    Ok(best)
}

/// One observed (x, y, t) tuple; x is an id into the dataset's support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoredSample {
    pub x: usize,
    pub y: f64,
    pub t: bool,
}

/// Observed tuples together with the covariate table they reference.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoredDataset {
    support: Support,
    samples: Vec<CensoredSample>,
}

impl CensoredDataset {
    pub fn new(support: Support, samples: Vec<CensoredSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CipwError::Data("dataset must contain at least one sample".into()));
        }
        let m = support.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x >= m {
                return Err(CipwError::Data(format!("sample {i} references covariate {} of {m}", s.x)));
            }
            if !s.y.is_finite() {
                return Err(CipwError::Data(format!("sample {i} has non-finite outcome")));
            }
        }
        Ok(Self { support, samples })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }
    pub fn samples(&self) -> &[CensoredSample] {
        &self.samples
    }
    pub fn support(&self) -> Support {
        Arc::clone(&self.support)
    }
    pub fn points(&self) -> &[Covariate] {
        &self.support
    }

    /// Samples at the given positions, sharing the support.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(self.support(), idx.iter().map(|&i| self.samples[i]).collect())
    }

    /// Same samples with outcomes rewritten by `f(sample)`.
    pub fn map_outcomes(&self, f: impl Fn(&CensoredSample) -> f64) -> Result<Self> {
        Self::new(self.support(), self.samples.iter().map(|s| CensoredSample { y: f(s), ..*s }).collect())
    }

    /// Distinct covariate ids present, ascending.
    pub fn covariates_seen(&self) -> Vec<usize> {
        let mut seen = vec![false; self.support.len()];
        for s in &self.samples {
            seen[s.x] = true;
        }
        (0..seen.len()).filter(|&x| seen[x]).collect()
    }
}
