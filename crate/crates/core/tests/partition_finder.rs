use cipw::model::{true_ate, PropensityMap, ScoreLabel};
use cipw::moments::check_good_local;
use cipw::partition_finder::*;
use cipw::rng::rng_from;
use cipw::synth::{make_planted, make_prop92, make_thm91, perturb_scores, sample_dataset, PerturbMode, PlantedSpec};
use proptest::prelude::*;

fn overlap(p: f64) -> f64 {
    p * (1.0 - p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    // O(β/9; e) ⊆ {ê(1 − ê) < β/3} ⊆ O(β; e) whenever |ê − e| ≤ ε < β/9.
    #[test]
    fn outlier_test_is_sandwiched(e in 0.0001f64..0.9999, beta in 0.001f64..0.25, u in -1.0f64..1.0, f in 0.0f64..1.0) {
        let eps = f * beta / 9.0 * 0.999;
        let h = (e + u * eps).clamp(1e-9, 1.0 - 1e-9);
        let hat = PropensityMap::new(vec![h], ScoreLabel::Estimate).unwrap();
        let test = is_hat_outlier(&hat, 0, beta).unwrap();
        if overlap(e) < beta / 9.0 {
            prop_assert!(test);
        }
        if test {
            prop_assert!(overlap(e) < beta);
        }
    }
}

#[test]
fn detect_k_finds_both_thm91_outliers() {
    let (eta, eps) = (0.05, 0.02);
    let d = make_thm91(eta, eps, 20, 10_000).unwrap();
    let mut hits = 0;
    for seed in 0..20 {
        let data = sample_dataset(&d, 10_000, 300 + seed).unwrap();
        // an outlier atom only enters C1 through its samples, which it has w.h.p.
        if detect_k(&data, &d.scores(), eps, 1.0 / 9.0).unwrap() == 2 {
            hits += 1;
        }
    }
    assert_eq!(hits, 20);
}

#[test]
fn detect_k_recovers_planted_k() {
    for (k, seed) in [(1usize, 311u64), (2, 312), (3, 313), (4, 314)] {
        let spec = PlantedSpec::new(2, k, 0.1, 0.2, 0.3, 1.0, seed);
        let p = make_planted(&spec).unwrap();
        let data = sample_dataset(&p.dist, 20_000, seed + 100).unwrap();
        assert_eq!(detect_k(&data, &p.dist.scores(), spec.alpha, spec.beta).unwrap(), k, "k = {k}");
    }
}

#[test]
fn planted_output_is_good_local_and_deterministic() {
    let spec = PlantedSpec::new(2, 2, 0.1, 0.2, 0.3, 1.0, 320);
    let p = make_planted(&spec).unwrap();
    let eps = 0.02;
    let hat = perturb_scores(&p.dist.scores(), eps, PerturbMode::Random, 321).unwrap();
    let data = sample_dataset(&p.dist, 40_000, 322).unwrap();
    let cfg = FinderConfig::new(spec.alpha, spec.beta, eps, 323);
    let r = find_good_partition(&data, &hat, &cfg).unwrap();
    assert_eq!(r.k_found, 2);
    assert_eq!(r.c1_size + r.c2_size, data.n());
    let rep = check_good_local(&p.dist, &r.fpart, 2.0 * spec.alpha, spec.beta / 9.0, eps).unwrap();
    assert!(rep.verdict, "{rep:?}");
    assert_eq!(r, find_good_partition(&data, &hat, &cfg).unwrap());
    assert!(r.tau.is_finite());
}

#[test]
fn robust_ate_is_close_on_prop92() {
    // β = 10ε keeps the ε ≤ β/10 precondition; anti_outlier moves ê(x1) to η − ε
    let (eta, eps) = (0.04, 0.01);
    let d = make_prop92(eta).unwrap().with_feasible_variances();
    let hat = perturb_scores(&d.scores(), eps, PerturbMode::AntiOutlier, 0).unwrap();
    let data = sample_dataset(&d, 100_000, 330).unwrap();
    let cfg = FinderConfig::new(0.05, 0.1, eps, 331);
    let r = find_good_partition(&data, &hat, &cfg).unwrap();
    assert_eq!(r.k_found, 1);
    assert!((r.tau - true_ate(&d)).abs() <= 0.05, "{}", r.tau);
}

#[test]
fn every_c2_sample_lands_in_a_set_or_null() {
    let mut rng = rng_from(340);
    use rand::Rng as _;
    let spec = PlantedSpec::new(3, 3, 0.1, 0.2, 0.3, 1.0, 341);
    let p = make_planted(&spec).unwrap();
    for trial in 0..5 {
        let n = rng.random_range(50..2000);
        let data = sample_dataset(&p.dist, n, 342 + trial).unwrap();
        let cfg = FinderConfig::new(spec.alpha, spec.beta, 0.01, trial);
        let Ok(r) = find_good_partition(&data, &p.dist.scores(), &cfg) else { continue };
        for x in 0..p.dist.m() {
            let row = r.fpart.row(x).unwrap();
            assert!(!row.is_empty());
            let tot: f64 = row.iter().map(|c| c.1).sum();
            assert!((tot - 1.0).abs() <= 1e-12);
        }
        let null_in_c2 = (0..p.dist.m()).filter(|&x| r.fpart.hard_cell(x) == Some(cipw::model::Cell::Null)).count();
        assert!(r.null_assigned <= null_in_c2);
    }
}

#[test]
fn too_small_dataset_is_rejected() {
    let d = make_prop92(0.25).unwrap().with_feasible_variances();
    let one = sample_dataset(&d, 1, 0).unwrap();
    assert!(find_good_partition(&one, &d.scores(), &FinderConfig::new(0.1, 0.2, 0.0, 0)).is_err());
}
