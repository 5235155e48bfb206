use cipw::harness::*;
use cipw::model::{Partition, PerturbationBall};
use cipw::moments::cipw_moments;
use cipw::synth::{make_lem16, make_lem_c1, make_prop92};

#[test]
fn ipw_rmse_matches_analytic_on_lem_c1() {
    let d = make_lem_c1(0.01).unwrap();
    let r = mc_rmse(&d, &EstimatorSpec::Ipw, &d.scores(), 1000, 10_000, 501).unwrap();
    let want = cipw_moments(&d, &Partition::singletons(2), &d.scores(), 1000).unwrap().rmse;
    assert!((r.rmse - want).abs() <= 3.0 * r.rmse_se, "{} vs {want}, se {}", r.rmse, r.rmse_se);
}

#[test]
fn ipw_on_lem16_is_root_n() {
    let d = make_lem16();
    let r = mc_rmse(&d, &EstimatorSpec::Ipw, &d.scores(), 400, 2000, 502).unwrap();
    assert!(r.rmse <= 0.15, "{}", r.rmse);
}

#[test]
fn doubling_replications_shrinks_the_standard_error() {
    let d = make_lem16();
    let a = mc_rmse(&d, &EstimatorSpec::Ipw, &d.scores(), 100, 2000, 503).unwrap();
    let b = mc_rmse(&d, &EstimatorSpec::Ipw, &d.scores(), 100, 4000, 503).unwrap();
    let ratio = a.rmse_se / b.rmse_se;
    assert!((1.25..=1.6).contains(&ratio), "{ratio}");
}

#[test]
fn comparison_orders_estimators_on_prop92() {
    let d = make_prop92(0.1).unwrap().with_feasible_variances();
    let ball = PerturbationBall::new(d.scores(), 0.05).unwrap();
    let specs = [EstimatorSpec::Ipw, EstimatorSpec::Cipw(Partition::merged(2))];
    let t = compare(&d, &specs, &ball, 500, 200, 504).unwrap();
    assert_eq!(t.modes.len(), 3 + RANDOM_CORNERS);
    assert_eq!(t.rows.len(), 2 * t.modes.len());
    let ipw = t.worst("ipw").unwrap();
    let merged = t.worst("cipw").unwrap();
    assert!(merged.rmse < ipw.rmse);
    assert_eq!(t, compare(&d, &specs, &ball, 500, 200, 504).unwrap());
    assert!(t.get("ipw", "anti_outlier").is_some());
}

#[test]
fn estimator_names() {
    assert_eq!(EstimatorSpec::Trimmed(0.02).name(), "trimmed(0.02)");
    assert_eq!(EstimatorSpec::Ipw.name(), "ipw");
    assert_eq!(EstimatorSpec::RobustAte(cipw::partition_finder::FinderConfig::new(0.1, 0.2, 0.0, 0)).name(), "robust_ate");
}
