//! Cross-estimator harness check: on the same stream of simulated datasets,
//! split-aggregated intervals and stacked full-sample intervals must attain
//! nearly the same coverage at moderate sample size — the two estimators are
//! interchangeable for inference at balanced splits.

use rayon::prelude::*;
use splitfit::models::{make_linear_pair, simulate_linear, LinearPairSpec};
use splitfit::sim::child_seed;
use splitfit::solve::SolverConfig;
use splitfit::split::{fit_with_covariance, wald_interval, SplitAssignment};
use splitfit::stacked::fit_stacked;

#[test]
fn stacked_and_split_coverage_agree_at_moderate_n() {
    let spec = LinearPairSpec::default();
    let truth = spec.beta0;
    let n = 1000;
    let b_count = 25;
    let replications = 400;
    let config = SolverConfig::default();

    let hits: Vec<(bool, bool)> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_linear(&spec, n, child_seed(4242, 0, rep)).unwrap();
            let system = make_linear_pair(&spec);
            let target = system.dim_first();

            let splits =
                SplitAssignment::generate(n, b_count, 0.5, child_seed(4242, 1, rep)).unwrap();
            let split = fit_with_covariance(&system, &data, &splits, &config).unwrap();
            let (lo_s, hi_s) = wald_interval(
                split.fit.combined()[target],
                split.covariance.variance(target),
                0.95,
            )
            .unwrap();

            let stacked = fit_stacked(&system, &data, &config).unwrap();
            let (lo_t, hi_t) = wald_interval(
                stacked.combined()[target],
                stacked.covariance.variance(target),
                0.95,
            )
            .unwrap();

            (lo_s <= truth && truth <= hi_s, lo_t <= truth && truth <= hi_t)
        })
        .collect();

    let split_cover =
        100.0 * hits.iter().filter(|(s, _)| *s).count() as f64 / replications as f64;
    let stacked_cover =
        100.0 * hits.iter().filter(|(_, t)| *t).count() as f64 / replications as f64;
    let gap = (split_cover - stacked_cover).abs();
    assert!(
        gap < 1.5,
        "split coverage {split_cover}% vs stacked coverage {stacked_cover}% (gap {gap})"
    );
    // Both must also sit in a sane band around the nominal level.
    for (name, cover) in [("split", split_cover), ("stacked", stacked_cover)] {
        assert!(
            (90.0..=99.0).contains(&cover),
            "{name} coverage = {cover}%"
        );
    }
}
