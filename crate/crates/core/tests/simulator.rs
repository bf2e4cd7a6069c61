use deadline_core::simulator::{
    double_payment_value, run_agent, sample_correlated, sample_path, simulate_batch, simulate_double_payment,
    simulate_traces, trace_seed, BatchSummary, CorrelatedBernoulli,
};
use deadline_core::value_solver::{solve, solve_two_payment, ModelParams, TwoPaymentSpec};
use deadline_core::UtilitySpec;
use proptest::prelude::*;

#[test]
fn arrivals_average_lambda_times_horizon() {
    let params = ModelParams::new(1.0, 10.0, 1, 0.0);
    let counts: Vec<f64> = (0..100_000u64)
        .map(|k| sample_path(&params, 0.0, trace_seed(11, k)).unwrap().len() as f64)
        .collect();
    let summary = BatchSummary::from_samples(&counts);
    assert!((summary.mean - 10.0).abs() < 0.1, "mean count {}", summary.mean);
    let thetas: Vec<f64> = (0..2000u64)
        .flat_map(|k| sample_path(&params, 0.0, trace_seed(12, k)).unwrap())
        .map(|(_, theta)| theta)
        .collect();
    assert!(thetas.iter().all(|th| (0.0..1.0).contains(th)));
}

#[test]
fn single_unit_agent_earns_the_value() {
    let spec = UtilitySpec::power(1.0, 0.5).unwrap();
    let grid = solve(&spec, &ModelParams::new(1.0, 10.0, 1, 6.0)).unwrap();
    let summary = simulate_batch(&grid, &spec, 1, 8.0, 99, 200_000).unwrap();
    assert!(summary.z_score(0.5) < 4.0, "{summary:?}");
}

#[test]
fn short_remaining_time_is_nearly_worthless() {
    let spec = UtilitySpec::power(1.0, 0.5).unwrap();
    let grid = solve(&spec, &ModelParams::new(1.0, 10.0, 2, 9.0)).unwrap();
    let t0 = 10.0 - 1e-2;
    let v = grid.value(t0, 2).unwrap();
    // Roughly one chance in a hundred of a single opportunity, spent fully.
    assert!((v - 1e-2 * 2f64.sqrt() / 2.0).abs() < 1e-4, "V = {v}");
    let summary = simulate_batch(&grid, &spec, 2, t0, 3, 200_000).unwrap();
    assert!(summary.z_score(v) < 4.0, "{summary:?} vs {v}");
}

#[test]
fn empty_stock_earns_nothing() {
    let spec = UtilitySpec::power(1.0, 0.5).unwrap();
    let grid = solve(&spec, &ModelParams::new(1.0, 10.0, 2, 8.0)).unwrap();
    let trace = run_agent(&grid, &spec, 0, 8.0, 5).unwrap();
    assert_eq!(trace.realized_utility, 0.0);
    assert!(trace.decisions.iter().all(|&d| d == (0, 0)));
    assert!(run_agent(&grid, &spec, 3, 8.0, 5).is_err());
    assert!(run_agent(&grid, &spec, 1, 10.5, 5).is_err());
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let spec = UtilitySpec::power(2.0, 0.5).unwrap();
    let grid = solve(&spec, &ModelParams::new(1.0, 10.0, 3, 6.0)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_batch(&grid, &spec, 3, 6.0, 42, 20_000).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
    assert_ne!(one, simulate_batch(&grid, &spec, 3, 6.0, 43, 20_000).unwrap());
    assert_eq!(run_agent(&grid, &spec, 3, 6.0, 7).unwrap(), run_agent(&grid, &spec, 3, 6.0, 7).unwrap());
}

#[test]
fn double_payment_value_is_affine_in_c() {
    let spec = UtilitySpec::power(1.0, 0.5).unwrap();
    let tp = TwoPaymentSpec { base: ModelParams::new(1.0, 10.0, 2, 4.0), x: 1, x_bar: 1, t_bar: 9.0 };
    let grids = solve_two_payment(&spec, &tp).unwrap();
    let t = 5.0;
    let at = |c: f64| double_payment_value(&grids, &CorrelatedBernoulli::new(0.4, 0.7, c).unwrap(), t).unwrap();
    let (a, b, m) = (at(0.0), at(0.3), at(0.15));
    assert!((m.value - 0.5 * (a.value + b.value)).abs() < 1e-12);
    assert!(((b.value - a.value) / 0.3 - a.d_dc).abs() < 1e-9);
    assert!(a.d_dc > 0.0);

    let sure = double_payment_value(&grids, &CorrelatedBernoulli::new(1.0, 1.0, 0.0).unwrap(), t).unwrap();
    assert!((sure.value - grids.value(t, 1).unwrap()).abs() < 1e-12);
    assert!(double_payment_value(&grids, &CorrelatedBernoulli::new(0.4, 0.7, 0.0).unwrap(), 9.0).is_err());
}

#[test]
fn simulated_double_payment_matches_its_value() {
    let spec = UtilitySpec::power(1.0, 0.5).unwrap();
    let tp = TwoPaymentSpec { base: ModelParams::new(1.0, 10.0, 2, 4.0), x: 1, x_bar: 1, t_bar: 8.0 };
    let grids = solve_two_payment(&spec, &tp).unwrap();
    for (p1, p2, c) in [(0.5, 0.5, 0.0), (0.5, 0.5, 0.5), (0.3, 0.8, 0.2)] {
        let dist = CorrelatedBernoulli::new(p1, p2, c).unwrap();
        let expected = double_payment_value(&grids, &dist, 5.0).unwrap().value;
        let summary = simulate_double_payment(&grids, &spec, &dist, 5.0, 17, 200_000).unwrap();
        assert!(summary.z_score(expected) < 4.0, "({p1},{p2},{c}): {summary:?} vs {expected}");
    }
}

#[test]
fn sampler_hits_the_joint_table() {
    let dist = CorrelatedBernoulli::new(0.2, 0.9, 0.1).unwrap();
    let (lo, hi) = CorrelatedBernoulli::c_range(0.2, 0.9);
    assert!(lo == 0.0 && (hi - 0.1).abs() < 1e-15);
    let n = 100_000u64;
    let mut counts = [[0u64; 2]; 2];
    for k in 0..n {
        let (a, b) = sample_correlated(&dist, trace_seed(4, k));
        counts[usize::from(a)][usize::from(b)] += 1;
    }
    let joint = dist.joint();
    for a in 0..2 {
        for b in 0..2 {
            let p = joint[a][b];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let f = counts[a][b] as f64 / n as f64;
            assert!((f - p).abs() <= 4.0 * se, "cell ({a},{b}) freq {f} vs {p}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_are_consistent(seed in any::<u64>(), x0 in 0usize..=3, t0 in 4.0f64..10.0) {
        let spec = UtilitySpec::power(1.5, 0.7).unwrap();
        let grid = solve(&spec, &ModelParams::new(2.0, 10.0, 3, 4.0).with_dt(5e-3)).unwrap();
        for trace in simulate_traces(&grid, &spec, x0, t0, seed, 4).unwrap() {
            prop_assert!(trace.check(&spec, 10.0).is_ok());
            let spent: usize = trace.decisions.iter().map(|d| d.0).sum();
            prop_assert!(spent <= x0);
            prop_assert!(trace.opportunities.iter().all(|o| o.0 >= t0));
        }
    }

    #[test]
    fn joint_table_is_a_distribution(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let (lo, hi) = CorrelatedBernoulli::c_range(p1, p2);
        let dist = CorrelatedBernoulli::new(p1, p2, lo + frac * (hi - lo)).unwrap();
        let j = dist.joint();
        prop_assert!(j.iter().flatten().all(|&p| p >= -1e-12));
        prop_assert!((j.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((j[1][0] + j[1][1] - p1).abs() < 1e-12);
        prop_assert!((j[0][1] + j[1][1] - p2).abs() < 1e-12);
    }
}
