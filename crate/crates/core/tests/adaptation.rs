use microdata_core::adaptation::*;
use microdata_core::gp::KernelVariant;
use microdata_core::map_elites::*;
use microdata_core::rng::rng_from_seed;
use microdata_core::testbeds::{gait_proxy_eval, DamageCondition, DamageId, GAIT_DIM};
use proptest::prelude::*;
use rand::Rng;

fn random_archive(seed: u64, k: usize, bins: usize, n: usize) -> EliteArchive {
    let mut rng = rng_from_seed(seed);
    let mut a = EliteArchive::new(GridSpec {
        descriptor_dim: k,
        bins_per_dim: bins,
    })
    .unwrap();
    for _ in 0..n {
        let descriptor: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        a.insert(Elite {
            params: descriptor.clone(),
            fitness: rng.random_range(-1.0..1.0),
            descriptor,
        })
        .unwrap();
    }
    a
}

/// Two cells far apart relative to the length-scale.
fn two_cell_prior(prior_a: f64, prior_b: f64) -> PriorMap {
    let mut a = EliteArchive::new(GridSpec {
        descriptor_dim: 1,
        bins_per_dim: 2,
    })
    .unwrap();
    a.insert(Elite {
        params: vec![0.0],
        fitness: prior_a,
        descriptor: vec![0.1],
    })
    .unwrap();
    a.insert(Elite {
        params: vec![1.0],
        fitness: prior_b,
        descriptor: vec![0.9],
    })
    .unwrap();
    build_prior(&a).unwrap()
}

fn decorrelated() -> AdaptConfig {
    AdaptConfig {
        length_scale: 1e-3,
        signal_variance: 0.04,
        noise_variance: 1e-6,
        kappa: 2.0,
        ..Default::default()
    }
}

#[test]
fn prior_has_one_entry_per_occupied_cell() {
    for seed in 0..20 {
        let a = random_archive(seed, 3, 4, 1 + seed as usize * 5);
        let p = build_prior(&a).unwrap();
        assert_eq!(p.len(), a.len());
        assert!(p.entries().windows(2).all(|w| w[0].cell < w[1].cell));
    }
    let single = random_archive(1, 2, 3, 1);
    assert_eq!(build_prior(&single).unwrap().len(), 1);
}

#[test]
fn prior_survives_archive_csv_round_trip() {
    let a = random_archive(4, 6, 5, 3_000);
    let mut bytes = Vec::new();
    a.write_csv(&mut bytes).unwrap();
    let b = EliteArchive::read_csv(bytes.as_slice(), *a.grid(), "mem").unwrap();
    assert_eq!(build_prior(&a).unwrap(), build_prior(&b).unwrap());
}

#[test]
fn bad_observation_moves_selection_to_other_family() {
    let mut s = AdaptState::new(two_cell_prior(0.9, 0.5), decorrelated()).unwrap();
    assert_eq!(adapt_select_next(&s, 2.0).unwrap(), CellIndex(vec![0]));
    s.step(&mut |_| 0.1).unwrap();
    assert_eq!(s.status(), &AdaptStatus::Running);
    let post = s.posterior();
    let ucb: Vec<f64> = post.iter().map(|p| p.mean + 2.0 * p.std_dev()).collect();
    assert!((ucb[0] - 0.1).abs() < 1e-2, "{ucb:?}");
    assert!((ucb[1] - 0.9).abs() < 1e-9, "{ucb:?}");
    assert_eq!(adapt_select_next(&s, 2.0).unwrap(), CellIndex(vec![1]));
}

#[test]
fn observing_the_prior_value_only_shrinks_uncertainty() {
    let p = build_prior(&random_archive(8, 2, 5, 200)).unwrap();
    let mut s = AdaptState::new(
        p.clone(),
        AdaptConfig {
            budget: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let before = s.posterior();
    let idx = p
        .entries()
        .iter()
        .position(|e| e.cell == adapt_select_next(&s, 2.0).unwrap())
        .unwrap();
    let prior_value = p.entries()[idx].prior_fitness;
    s.step(&mut |_| prior_value).unwrap();
    let after = s.posterior();
    assert!((after[idx].mean - prior_value).abs() < 1e-9);
    assert!(after[idx].variance < before[idx].variance * 1e-3);
    for (a, b) in after.iter().zip(&before) {
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!(a.variance <= b.variance + 1e-15);
    }
}

#[test]
fn observation_overrides_any_prior() {
    let mut rng = rng_from_seed(77);
    for _ in 0..100 {
        let prior_a = rng.random_range(-1.0..1.0);
        let v = rng.random_range(-1.0..1.0);
        let map = two_cell_prior(prior_a, prior_a - 1.0);
        let mut s = AdaptState::new(
            map,
            AdaptConfig {
                length_scale: 0.2,
                ..decorrelated()
            },
        )
        .unwrap();
        s.step(&mut |_| v).unwrap();
        assert!((s.posterior()[0].mean - v).abs() < 1e-3, "prior {prior_a} v {v}");
    }
}

#[test]
fn single_cell_prior_takes_one_trial() {
    let p = build_prior(&random_archive(3, 2, 3, 1)).unwrap();
    for v in [-5.0, 0.0, 5.0] {
        let t = adapt_run(&p, &mut |_| v, &AdaptConfig::default()).unwrap();
        assert_eq!(t.trials(), 1);
        assert!(matches!(t.status, AdaptStatus::Stopped(_)));
    }
}

#[test]
fn stop_threshold_stays_below_the_maximum() {
    assert_eq!(stop_threshold(0.9, 1.0), 0.9);
    assert!((stop_threshold(0.9, -1.0) + 1.1).abs() < 1e-12);
    assert_eq!(stop_threshold(0.9, 0.0), 0.0);
}

#[test]
fn good_first_trial_stops_immediately() {
    let p = build_prior(&random_archive(5, 3, 4, 100)).unwrap();
    let top = p.entries().iter().map(|e| e.prior_fitness).fold(f64::MIN, f64::max);
    let t = adapt_run(&p, &mut |_| top + 1.0, &AdaptConfig::default()).unwrap();
    assert_eq!(t.trials(), 1);
    assert_eq!(t.status, AdaptStatus::Stopped(StopReason::StopRuleMet));
}

#[test]
fn zero_kappa_starts_at_best_intact_elite() {
    for seed in 0..10 {
        let a = random_archive(seed, 3, 4, 500);
        let p = build_prior(&a).unwrap();
        let s = AdaptState::new(
            p,
            AdaptConfig {
                kappa: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(&adapt_select_next(&s, 0.0).unwrap(), a.best().unwrap().0);
    }
}

#[test]
fn trace_csv_layout() {
    let p = two_cell_prior(0.9, 0.5);
    let t = adapt_run(&p, &mut |x| if x[0] == 0.0 { 0.1 } else { 0.25 }, &decorrelated()).unwrap();
    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "trial,cell,observed,best,stop_metric");
    assert!(lines[1].starts_with("1,0,0.1,0.1,"));
    assert!(lines[2].starts_with("2,1,0.25,0.25,"));
    assert_eq!(lines.len(), t.trials() + 1);
}

#[test]
fn matern_and_squared_exponential_both_run() {
    let p = build_prior(&random_archive(6, 2, 5, 100)).unwrap();
    for kernel in [KernelVariant::Matern52, KernelVariant::SquaredExponential] {
        let cfg = AdaptConfig {
            kernel,
            ..Default::default()
        };
        let t = adapt_run(&p, &mut |x| -(x[0] - 0.3).abs(), &cfg).unwrap();
        assert!(t.trials() <= cfg.budget);
    }
}

fn gait_archive(seed: u64) -> EliteArchive {
    let intact = DamageCondition::intact();
    let task = |p: &[f64]| {
        let (f, d) = gait_proxy_eval(p, &intact).unwrap();
        (f, d.to_vec())
    };
    map_elites_run(
        &task,
        GAIT_DIM,
        GridSpec::default(),
        200_000,
        &MapElitesConfig::default(),
        &mut rng_from_seed(seed),
    )
    .unwrap()
}

#[test]
fn first_damaged_trial_is_intact_best() {
    let a = gait_archive(0);
    let p = build_prior(&a).unwrap();
    let d1 = DamageCondition::from_id(DamageId::D1);
    let t = adapt_run(&p, &mut |x| gait_proxy_eval(x, &d1).unwrap().0, &AdaptConfig::default()).unwrap();
    assert_eq!(&t.records[0].cell, a.best().unwrap().0);
}

#[test]
fn d1_recovery_within_a_dozen_trials() {
    let d1 = DamageCondition::from_id(DamageId::D1);
    let mut bests: Vec<f64> = (0..10)
        .map(|seed| {
            let p = build_prior(&gait_archive(seed)).unwrap();
            let t = adapt_run(&p, &mut |x| gait_proxy_eval(x, &d1).unwrap().0, &AdaptConfig::default()).unwrap();
            assert!(t.trials() <= 12);
            t.best_observed().unwrap()
        })
        .collect();
    bests.sort_by(f64::total_cmp);
    let median = 0.5 * (bests[4] + bests[5]);
    assert!(median >= 0.75, "median {median}, {bests:?}");
    assert!(bests[9] <= 5.0 / 6.0 + 1e-12);
}

/// Multiples of 2^-20 in (0, 2); adding a dyadic shift to them is exact.
fn dyadic() -> impl Strategy<Value = f64> {
    (1i64..(1i64 << 21)).prop_map(|k| k as f64 / (1u64 << 20) as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_invariants(seed in 0u64..1000, n in 1usize..300, budget in 1usize..15) {
        let a = random_archive(seed, 2, 6, n);
        let p = build_prior(&a).unwrap();
        let mut rng = rng_from_seed(seed ^ 0xabc);
        let table: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lookup = |x: &[f64]| p.entries().iter().position(|e| e.params == x).unwrap();
        let cfg = AdaptConfig { budget, ..Default::default() };
        let t = adapt_run(&p, &mut |x| table[lookup(x)], &cfg).unwrap();
        prop_assert!(t.trials() >= 1 && t.trials() <= budget);
        let mut running = f64::NEG_INFINITY;
        for r in &t.records {
            prop_assert!(a.get(&r.cell).is_some());
            running = running.max(r.observed);
            prop_assert_eq!(r.best, running);
        }
    }

    #[test]
    fn selection_is_shift_invariant(
        priors in prop::collection::vec(dyadic(), 2..40),
        obs in prop::collection::vec(dyadic(), 40),
        shift in prop_oneof![Just(0.5), Just(1.0), Just(2.0), Just(0.25)],
    ) {
        let grid = GridSpec { descriptor_dim: 1, bins_per_dim: 64 };
        let mut a = EliteArchive::new(grid).unwrap();
        for (i, f) in priors.iter().enumerate() {
            let d = (i as f64 + 0.5) / 64.0;
            a.insert(Elite { params: vec![d], fitness: *f, descriptor: vec![d] }).unwrap();
        }
        let p = build_prior(&a).unwrap();
        let shifted = p.map_fitness(|e| e.prior_fitness + shift);
        // Values stay positive, so a huge alpha keeps both runs going for the
        // full budget.
        let cfg = AdaptConfig { budget: 8, alpha: 1e9, ..Default::default() };
        let run = |map: &PriorMap, c: f64| {
            let mut s = AdaptState::new(map.clone(), cfg.clone()).unwrap();
            let mut cells = Vec::new();
            for _ in 0..cfg.budget {
                let r = s.step(&mut |x| obs[(x[0] * 64.0) as usize] + c).unwrap();
                cells.push(r.cell.clone());
            }
            cells
        };
        prop_assert_eq!(run(&p, 0.0), run(&shifted, shift));
    }
}
