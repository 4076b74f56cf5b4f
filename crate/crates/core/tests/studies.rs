use pseudoreg::panel::WeightScheme;
use pseudoreg::pseudovalues::{pseudo_values, Method};
use pseudoreg::simulation::{power_study, simulate_panel, ClusterSizes, SimConfig, Strategy};

// Unweighted equations are biased under informative sizes, so their
// rejection rate need not grow on both sides of zero.
#[test]
fn cluster_weighted_power_grows_away_from_the_null() {
    let cfg = SimConfig {
        m: 30,
        seed: 31,
        ..SimConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = power_study(&cfg, &[-1.0, 0.0, 1.0], 200, threads).unwrap();
    for s in Strategy::POWER.into_iter().filter(|s| s.weights == WeightScheme::InverseClusterSize) {
        for state in 1..=3 {
            let at = |d: f64| result.value(d, state, &s.label(), "rejection_rate").unwrap();
            let null = at(0.0);
            assert!(
                at(-1.0) > null && at(1.0) > null,
                "{} state {state}: {} / {null} / {}",
                s.label(),
                at(-1.0),
                at(1.0)
            );
        }
    }
}

#[test]
fn non_informative_sizes_give_matching_power() {
    let cfg = SimConfig {
        m: 30,
        cluster_sizes: ClusterSizes::NonInformative,
        seed: 32,
        ..SimConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let replicates = 200;
    let result = power_study(&cfg, &[0.5], replicates, threads).unwrap();
    for state in 1..=3 {
        let gee = result.value(0.5, state, "method1+gee", "rejection_rate").unwrap();
        let cw = result.value(0.5, state, "method2+cwgee", "rejection_rate").unwrap();
        // Two correlated proportions; 3 SDs of an independent difference
        // is a generous bound.
        let p = 0.5 * (gee + cw);
        let sd = (2.0 * p * (1.0 - p) / replicates as f64).sqrt();
        assert!((gee - cw).abs() <= 3.0 * sd.max(0.01), "state {state}: {gee} vs {cw}");
    }
}

// Under censoring the Method 2 mean is only approximately the weighted
// estimate; at m = 60 and ~25% censoring the observed gap stays below 1e-3.
#[test]
fn censored_pseudo_value_means_stay_near_the_estimate() {
    let base = SimConfig { m: 60, ..SimConfig::default() };
    let scale = base.resolved_censor_scale().unwrap();
    for seed in 0..6 {
        let cfg = SimConfig {
            seed,
            censor_scale: Some(scale),
            ..base.clone()
        };
        let panel = simulate_panel(&cfg).unwrap();
        for state in 1..=3 {
            for (method, tol) in [(Method::One, 1e-4), (Method::Two, 5e-3)] {
                let pv = pseudo_values(&panel, method, state, &[1.0, 2.0, 3.0]).unwrap();
                for (a, b) in pv.mean().iter().zip(&pv.estimate) {
                    assert!((a - b).abs() < tol, "seed {seed} {method:?} state {state}: {a} vs {b}");
                }
            }
        }
    }
}
