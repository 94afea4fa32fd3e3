mod common;

use common::{random_cohort, rng, CohortOptions};
use msm_hybrid::inference::{bootstrap_ci, BootstrapConfig};
use msm_hybrid::markov_test::{grid_test, select_nonmarkov, GridTestConfig, Multiplier, SelectionConfig, TestMethod};
use msm_hybrid::sim::FrailtyModelSpec;
use msm_hybrid::{EstimatorKind, EstimatorSpec, EventHistory, Jump, MsmError, StateSpace, Transition};
use proptest::prelude::*;

fn idr_cohort(seed: u64, n: usize) -> (StateSpace, Vec<EventHistory>) {
    let space = StateSpace::illness_death_recovery();
    let opts = CohortOptions {
        censoring: true,
        ..CohortOptions::default()
    };
    let cohort = random_cohort(&mut rng(seed), &space, n, opts);
    (space, cohort)
}

fn spec(kind: EstimatorKind, s: f64, l: usize) -> EstimatorSpec {
    EstimatorSpec {
        kind,
        landmark_time: s,
        landmark_states: vec![l],
        nonmarkov: vec![Transition::new(1, 0)],
    }
}

#[test]
fn bootstrap_is_reproducible_and_worker_independent() {
    let (space, cohort) = idr_cohort(1, 60);
    let est = spec(EstimatorKind::Haj, 1.0, 0);
    let one = bootstrap_ci(&cohort, &space, &est, &BootstrapConfig { workers: Some(1), ..BootstrapConfig::new(100, 0.9, 42) }).unwrap();
    let many = bootstrap_ci(&cohort, &space, &est, &BootstrapConfig { workers: Some(3), ..BootstrapConfig::new(100, 0.9, 42) }).unwrap();
    assert_eq!(one.lower, many.lower);
    assert_eq!(one.upper, many.upper);
    let other = bootstrap_ci(&cohort, &space, &est, &BootstrapConfig::new(100, 0.9, 43)).unwrap();
    assert_ne!(one.lower, other.lower);
    for ((lo, hi), (_, p)) in one.lower.values.iter().zip(&one.upper.values).zip(one.estimate.points().skip(1)) {
        for j in 0..3 {
            assert!(lo[j] <= p[j] && p[j] <= hi[j]);
            assert!((0.0..=1.0).contains(&lo[j]) && (0.0..=1.0).contains(&hi[j]));
        }
    }
}

#[test]
fn identical_subjects_give_a_degenerate_band() {
    let space = StateSpace::illness_death_recovery();
    let cohort: Vec<EventHistory> = (0..20)
        .map(|i| {
            let jumps = vec![Jump { time: 2.0, from: 0, to: 1 }, Jump { time: 5.0, from: 1, to: 2 }];
            EventHistory::new(i.to_string(), 0, jumps, None, 10.0, &space).unwrap()
        })
        .collect();
    let band = bootstrap_ci(&cohort, &space, &spec(EstimatorKind::Aj, 0.0, 0), &BootstrapConfig::new(50, 0.95, 3)).unwrap();
    assert_eq!(band.lower.values, band.estimate.values);
    assert_eq!(band.upper.values, band.estimate.values);
}

#[test]
fn rare_landmark_state_aborts_the_bootstrap() {
    let space = StateSpace::illness_death_recovery();
    let mut cohort: Vec<EventHistory> = (0..40)
        .map(|i| EventHistory::new(i.to_string(), 0, vec![], None, 10.0, &space).unwrap())
        .collect();
    cohort.push(EventHistory::new("x", 1, vec![], None, 10.0, &space).unwrap());
    let err = bootstrap_ci(&cohort, &space, &spec(EstimatorKind::Lmaj, 1.0, 1), &BootstrapConfig::new(100, 0.95, 3)).unwrap_err();
    assert!(matches!(err, MsmError::TooManyDropped { .. }), "{err}");
    assert!(!err.is_input_error());
}

#[test]
fn multipliers_have_zero_mean_and_unit_variance() {
    let mut r = rng(9);
    for m in [Multiplier::CenteredPoisson, Multiplier::Gaussian] {
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| m.sample(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{m:?} mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "{m:?} var {var}");
    }
}

#[test]
fn grid_test_is_reproducible_and_worker_independent() {
    let model = FrailtyModelSpec::experiment1(2.0, 300).compile().unwrap();
    let cohort = model.simulate_cohort(4);
    let space = model.space();
    let grid = [6.0, 12.0, 17.0, 25.0];
    let run = |workers| {
        let cfg = GridTestConfig {
            replicates: 200,
            seed: 5,
            multiplier: Multiplier::CenteredPoisson,
            workers,
        };
        grid_test(&cohort, space, Transition::new(1, 0), &[1], None, &grid, &cfg).unwrap()
    };
    let (a, b) = (run(Some(1)), run(Some(4)));
    assert_eq!(a, b);
    assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    assert_eq!(a.point_statistics.len(), grid.len());
    assert_eq!(a.statistic, a.point_statistics.iter().copied().fold(f64::MIN, f64::max));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn selection_grows_with_alpha(seed in any::<u64>(), a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
        let (space, cohort) = idr_cohort(seed, 60);
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let select = |alpha| {
            let cfg = SelectionConfig {
                method: TestMethod::Point,
                landmark_times: vec![3.0],
                l1: vec![1],
                l2: None,
                alpha,
                replicates: 0,
                seed: 0,
                multiplier: Multiplier::CenteredPoisson,
                bonferroni: false,
                workers: Some(1),
            };
            select_nonmarkov(&cohort, &space, &cfg).unwrap().nonmarkov
        };
        let small = select(lo);
        let large = select(hi);
        prop_assert!(small.iter().all(|t| large.contains(t)), "{:?} not within {:?}", small, large);
    }
}
