use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use cipw::estimators::{
    cipw as cipw_hard, coarse_doubly_robust, doubly_robust, empirical_coarse_scores, empirical_coarse_scores_assigned,
    fractional_assign, cipw_assigned, ipw, neyman, trimmed_ipw, CoarseScoreTable, ConditionalMeanMap,
};
use cipw::harness::{compare, EstimatorSpec};
use cipw::io::{dist_from_json, dist_to_json, partition_from_json, read_dataset_csv, write_dataset_csv, PartitionFile};
use cipw::model::{CensoredDataset, FiniteDistribution, PerturbationBall, PropensityMap};
use cipw::moments::{cipw_moments, robust_rmse, RobustSearch};
use cipw::oracle::{brute_force_min_rmse, q_from_str, q_to_string, subset_sum_reduce, verify_reduction, SubsetSumInput};
use cipw::partition_finder::{find_good_partition, robust_ate, FinderConfig};
use cipw::rng::derive;
use cipw::synth::{
    make_lem16, make_lem_c1, make_planted, make_prop92, make_thm91, make_thm_d1, perturb_scores, sample_dataset,
    PerturbMode, PlantedSpec,
};
use cipw::{CipwError, Result};

use crate::{Cli, CoarseFrom, Command, Construction, Format, Method, Mode, Perturb};

pub fn exit_code(e: &CipwError) -> u8 {
    match e {
        CipwError::Config(_) | CipwError::Size(_) => 2,
        CipwError::Data(_) | CipwError::Lookup(_) | CipwError::Coverage(_) | CipwError::Feasibility(_) => 3,
        CipwError::Domain(_) | CipwError::Precondition(_) | CipwError::Geometry(_) => 4,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CipwError::Data(format!("{}: {e}", path.display())))
}

fn load_dist(path: &Path) -> Result<FiniteDistribution> {
    dist_from_json(&read(path)?)
}

fn load_partition(path: &Path) -> Result<PartitionFile> {
    partition_from_json(&read(path)?)
}

fn load_data(path: &Path, dist: Option<&FiniteDistribution>) -> Result<(CensoredDataset, Option<PropensityMap>)> {
    let file = std::fs::File::open(path).map_err(|e| CipwError::Data(format!("{}: {e}", path.display())))?;
    let support = dist.map(|d| d.support());
    let f = read_dataset_csv(file, support.as_ref())?;
    Ok((f.data, f.scores_hat))
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| CipwError::Config(format!("--{flag} is required here")))
}

fn need_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| CipwError::Config("--seed is required for stochastic output".into()))
}

fn config_hash(cli: &Cli) -> String {
    let text = serde_json::to_string(&cli.command).expect("arguments serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn envelope(cli: &Cli, seed: u64, result: Value) -> Value {
    json!({
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config_hash(cli),
        "result": result,
    })
}

fn header_line(cli: &Cli, seed: u64) -> String {
    format!("# seed={seed} version={} config_hash={}\n", env!("CARGO_PKG_VERSION"), config_hash(cli))
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CipwError::Data(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            let nl = if text.ends_with('\n') { "" } else { "\n" };
            match write!(out, "{text}{nl}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CipwError::Data(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn emit_json(cli: &Cli, v: &Value) -> Result<()> {
    emit(cli, &serde_json::to_string_pretty(v).expect("JSON value serializes"))
}

fn json_only(cli: &Cli) -> Result<()> {
    if cli.format == Format::Csv {
        return Err(CipwError::Config("this subcommand only writes JSON".into()));
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

/// Scores for moment-style commands: true e, or e perturbed within --eps.
/// Returns the seed when the perturbation was random.
fn scores_from(dist: &FiniteDistribution, p: &Perturb) -> Result<(PropensityMap, Option<u64>)> {
    let Some(eps) = p.eps else { return Ok((dist.scores(), None)) };
    let (mode, seed) = match p.mode {
        Mode::Random => (PerturbMode::Random, Some(need_seed(p.seed)?)),
        Mode::AntiOutlier => (PerturbMode::AntiOutlier, None),
        Mode::WorstBias => (PerturbMode::WorstBias(dist), None),
    };
    Ok((perturb_scores(&dist.scores(), eps, mode, seed.unwrap_or(0))?, seed))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { name, eta, eps, grid, n_intended, alpha, beta, lipschitz, rho, mu1, d, k, seed } => {
            json_only(cli)?;
            let dist = match name {
                Construction::Thm91 => make_thm91(need(*eta, "eta")?, need(*eps, "eps")?, *grid, *n_intended)?,
                Construction::Prop92 => make_prop92(need(*eta, "eta")?)?,
                Construction::LemC1 => make_lem_c1(need(*eps, "eps")?)?,
                Construction::Lem16 => make_lem16(),
                Construction::ThmD1 => make_thm_d1(
                    need(*alpha, "alpha")?,
                    need(*beta, "beta")?,
                    need(*lipschitz, "lipschitz")?,
                    need(*rho, "rho")?,
                    need(*eta, "eta")?,
                    *mu1,
                )?,
                Construction::Planted => {
                    let seed = need_seed(*seed)?;
                    let spec = PlantedSpec::new(
                        *d,
                        *k,
                        need(*alpha, "alpha")?,
                        need(*beta, "beta")?,
                        need(*rho, "rho")?,
                        need(*lipschitz, "lipschitz")?,
                        seed,
                    );
                    let planted = make_planted(&spec)?;
                    let result = json!({
                        "points": planted.dist.to_spec().points,
                        "mass": planted.dist.mass(),
                        "e": planted.dist.propensity(),
                        "mu0": planted.dist.mu0(),
                        "mu1": planted.dist.mu1(),
                        "v0": planted.dist.v0(),
                        "v1": planted.dist.v1(),
                        "p": planted.dist.norm(),
                        "balls": planted.balls,
                        "outliers": planted.outliers,
                    });
                    return emit_json(cli, &envelope(cli, seed, result));
                }
            };
            emit(cli, &dist_to_json(&dist))
        }

        Command::Sample { dist, n, perturb, with_scores } => {
            let dist = load_dist(dist)?;
            let seed = need_seed(perturb.seed)?;
            let data = sample_dataset(&dist, *n, seed)?;
            let scores = match perturb.eps {
                Some(eps) => {
                    let mode = match perturb.mode {
                        Mode::Random => PerturbMode::Random,
                        Mode::AntiOutlier => PerturbMode::AntiOutlier,
                        Mode::WorstBias => PerturbMode::WorstBias(&dist),
                    };
                    Some(perturb_scores(&dist.scores(), eps, mode, derive(seed, &[1]))?)
                }
                None if *with_scores => Some(dist.scores()),
                None => None,
            };
            let mut buf = Vec::new();
            write_dataset_csv(&mut buf, &data, scores.as_ref())?;
            let mut text = header_line(cli, seed);
            text.push_str(&String::from_utf8(buf).expect("utf-8 csv"));
            emit(cli, &text)
        }

        Command::Estimate { data, method, dist, partition, eta, coarse, alpha, beta, eps, seed } => {
            json_only(cli)?;
            let dist = dist.as_deref().map(load_dist).transpose()?;
            let (data, hat) = load_data(data, dist.as_ref())?;
            let scores = || -> Result<PropensityMap> {
                match (&hat, &dist) {
                    (Some(h), _) => Ok(h.clone()),
                    (None, Some(d)) => Ok(d.scores()),
                    (None, None) => Err(CipwError::Data("no e_hat column and no --dist for true scores".into())),
                }
            };
            let means = || -> Result<ConditionalMeanMap> {
                dist.as_ref()
                    .map(ConditionalMeanMap::from_dist)
                    .ok_or_else(|| CipwError::Config("--dist is required for conditional means".into()))
            };
            let mut used_seed = None;
            let value = match method {
                Method::Ipw => ipw(&data, &scores()?)?,
                Method::Trimmed => trimmed_ipw(&data, &scores()?, need(*eta, "eta")?)?,
                Method::Neyman => neyman(&data)?,
                Method::Dr => doubly_robust(&data, &means()?, &scores()?)?,
                Method::Cipw => {
                    let pf = load_partition(need_path(partition)?)?;
                    let s = scores()?;
                    let m = data.points().len();
                    if pf.is_fractional() {
                        let seed = need_seed(*seed)?;
                        used_seed = Some(seed);
                        let fpart = pf.to_fractional(m)?;
                        let cells = fractional_assign(&data, &fpart, seed)?;
                        let table = match coarse {
                            CoarseFrom::Empirical => empirical_coarse_scores_assigned(&data, &s, &cells, fpart.num_sets())?,
                            CoarseFrom::Analytic => CoarseScoreTable::analytic(need_dist(&dist)?, &fpart, &s)?,
                        };
                        cipw_assigned(&data, &cells, &table)?
                    } else {
                        let part = pf.to_partition(m)?;
                        let table = match coarse {
                            CoarseFrom::Empirical => empirical_coarse_scores(&data, &s, &part)?,
                            CoarseFrom::Analytic => CoarseScoreTable::analytic(need_dist(&dist)?, &part, &s)?,
                        };
                        cipw_hard(&data, &part, &table)?
                    }
                }
                Method::CoarseDr => {
                    let d = need_dist(&dist)?;
                    let part = load_partition(need_path(partition)?)?.to_partition(d.m())?;
                    let s = scores()?;
                    let table = match coarse {
                        CoarseFrom::Empirical => empirical_coarse_scores(&data, &s, &part)?,
                        CoarseFrom::Analytic => CoarseScoreTable::analytic(d, &part, &s)?,
                    };
                    coarse_doubly_robust(&data, &part, &means()?, &table)?
                }
                Method::Robust => {
                    let seed = need_seed(*seed)?;
                    used_seed = Some(seed);
                    let cfg = FinderConfig::new(need(*alpha, "alpha")?, need(*beta, "beta")?, *eps, seed);
                    robust_ate(&data, &scores()?, &cfg)?
                }
            };
            let result = json!({ "method": method, "estimate": value, "n": data.n() });
            match used_seed {
                Some(s) => emit_json(cli, &envelope(cli, s, result)),
                None => emit_json(cli, &result),
            }
        }

        Command::Moments { dist, partition, n, perturb } => {
            json_only(cli)?;
            let dist = load_dist(dist)?;
            let fpart = load_partition(partition)?.to_fractional(dist.m())?;
            let (scores, seed) = scores_from(&dist, perturb)?;
            let rep = cipw_moments(&dist, &fpart, &scores, *n)?;
            let mut result = to_json(&rep);
            result["scores"] = to_json(&scores.dense()?);
            match seed {
                Some(s) => emit_json(cli, &envelope(cli, s, result)),
                None => emit_json(cli, &result),
            }
        }

        Command::Robust { dist, partition, n, eps, grid } => {
            json_only(cli)?;
            let dist = load_dist(dist)?;
            let fpart = load_partition(partition)?.to_fractional(dist.m())?;
            let ball = PerturbationBall::strict(dist.scores(), *eps)?;
            let search = grid.map_or(RobustSearch::Corners, RobustSearch::Grid);
            let (rmse, worst) = robust_rmse(&dist, &fpart, &ball, *n, search)?;
            emit_json(cli, &json!({ "robust_rmse": rmse, "worst_scores": worst.dense()?, "search": to_json(&search) }))
        }

        Command::Find { data, dist, alpha, beta, eps, k_hint, lipschitz, seed } => {
            json_only(cli)?;
            let seed = need_seed(*seed)?;
            let dist = dist.as_deref().map(load_dist).transpose()?;
            let (data, hat) = load_data(data, dist.as_ref())?;
            let hat = hat.ok_or_else(|| CipwError::Data("dataset needs an e_hat column".into()))?;
            let mut cfg = FinderConfig::new(*alpha, *beta, *eps, seed);
            cfg.k_hint = *k_hint;
            cfg.lipschitz = *lipschitz;
            let res = find_good_partition(&data, &hat, &cfg)?;
            let result = json!({
                "tau": res.tau,
                "k_found": res.k_found,
                "balls": res.balls,
                "c1_size": res.c1_size,
                "c2_size": res.c2_size,
                "covered_outliers": res.covered_outliers,
                "null_assigned": res.null_assigned,
                "partition": PartitionFile::from_fractional(&res.fpart),
            });
            emit_json(cli, &envelope(cli, seed, result))
        }

        Command::Compare { dist, n, reps, eps, estimators, partition, eta, alpha, beta, seed } => {
            let seed = need_seed(*seed)?;
            let dist = load_dist(dist)?;
            let mut specs = Vec::new();
            for m in estimators {
                specs.push(match m {
                    Method::Ipw => EstimatorSpec::Ipw,
                    Method::Trimmed => EstimatorSpec::Trimmed(need(*eta, "eta")?),
                    Method::Neyman => EstimatorSpec::Neyman,
                    Method::Cipw => {
                        let pf = load_partition(need_path(partition)?)?;
                        if pf.is_fractional() {
                            EstimatorSpec::FractionalCipw(pf.to_fractional(dist.m())?)
                        } else {
                            EstimatorSpec::Cipw(pf.to_partition(dist.m())?)
                        }
                    }
                    Method::Dr => EstimatorSpec::Dr(ConditionalMeanMap::from_dist(&dist)),
                    Method::CoarseDr => EstimatorSpec::CoarseDr(
                        load_partition(need_path(partition)?)?.to_partition(dist.m())?,
                        ConditionalMeanMap::from_dist(&dist),
                    ),
                    Method::Robust => {
                        EstimatorSpec::RobustAte(FinderConfig::new(need(*alpha, "alpha")?, need(*beta, "beta")?, *eps, seed))
                    }
                });
            }
            let ball = PerturbationBall::new(dist.scores(), *eps)?;
            let table = compare(&dist, &specs, &ball, *n, *reps, seed)?;
            match cli.format {
                Format::Csv => emit(cli, &(header_line(cli, seed) + &table.to_csv())),
                Format::Json => emit_json(cli, &envelope(cli, seed, to_json(&table))),
            }
        }

        Command::Reduce { a, target, eps, certificate } => {
            json_only(cli)?;
            let input = SubsetSumInput::new(a.clone(), *target)?;
            let eps = eps.as_deref().map(q_from_str).transpose()?;
            let inst = subset_sum_reduce(&input, eps)?;
            let mut out = inst.to_json();
            if let Some(r) = certificate {
                let check = verify_reduction(&inst, r)?;
                out["certificate"] = json!({
                    "indices": r,
                    "mse": q_to_string(&check.mse_of_certificate),
                    "leq_u": check.leq_u,
                });
            }
            emit_json(cli, &out)
        }

        Command::Oracle { dist, n } => {
            json_only(cli)?;
            let dist = load_dist(dist)?;
            let (mse, best) = brute_force_min_rmse(&dist, *n)?;
            emit_json(cli, &json!({ "mse": mse, "rmse": mse.max(0.0).sqrt(), "partition": PartitionFile::from_partition(&best) }))
        }
    }
}

fn need_path(p: &Option<std::path::PathBuf>) -> Result<&Path> {
    p.as_deref().ok_or_else(|| CipwError::Config("--partition is required here".into()))
}

fn need_dist(d: &Option<FiniteDistribution>) -> Result<&FiniteDistribution> {
    d.as_ref().ok_or_else(|| CipwError::Config("--dist is required here".into()))
}
