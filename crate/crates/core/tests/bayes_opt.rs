//! Acquisition functions and proposal routines against Monte-Carlo,
//! dense-grid and brute-force oracles, plus loop-level properties.

use microdata_core::bayes_opt::{
    acquisition_value, bo_run, propose_continuous, propose_discrete, AcquisitionSpec, BoConfig, ProposeConfig,
};
use microdata_core::gp::{GpModel, KernelSpec, KernelVariant, PriorMean};
use microdata_core::rng::rng_from_seed;
use microdata_core::Error;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn random_model(rng: &mut impl Rng, n: usize, d: usize) -> GpModel {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = KernelSpec::isotropic(KernelVariant::SquaredExponential, d, rng.random_range(0.1..0.4), 1.0).unwrap();
    GpModel::fit(k, 1e-6, PriorMean::default(), xs, ys).unwrap()
}

#[test]
fn ei_matches_monte_carlo() {
    let mut rng = rng_from_seed(21);
    let n = 1_000_000;
    for _ in 0..20 {
        let mean = rng.random_range(-1.0..1.0);
        let sd: f64 = rng.random_range(0.05..1.0);
        let best = rng.random_range(-1.0..1.0);
        let xi = rng.random_range(0.0..0.1);
        let normal = Normal::new(mean, sd).unwrap();
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let imp = (normal.sample(&mut rng) - best - xi).max(0.0);
            sum += imp;
            sum2 += imp * imp;
        }
        let mc = sum / n as f64;
        let se = ((sum2 / n as f64 - mc * mc) / n as f64).sqrt();
        let ei = acquisition_value(&AcquisitionSpec::ei(xi), mean, sd * sd, best).unwrap();
        assert!(ei >= 0.0);
        assert!((ei - mc).abs() <= 3.0 * se, "EI {ei} vs MC {mc} ± {se}");
    }
}

#[test]
fn continuous_proposal_reaches_grid_optimum() {
    for seed in 0..10 {
        let mut rng = rng_from_seed(300 + seed);
        let model = random_model(&mut rng, 5, 1);
        for acq in [AcquisitionSpec::ei(0.01), AcquisitionSpec::ucb(2.0)] {
            let best = model.best_target().unwrap();
            let score = |x: f64| {
                let p = model.predict(&[x]).unwrap();
                acquisition_value(&acq, p.mean, p.variance, best).unwrap()
            };
            let grid_max = (0..10_000)
                .map(|i| score(i as f64 / 9_999.0))
                .fold(f64::NEG_INFINITY, f64::max);
            let (x, v) = propose_continuous(&model, &acq, &[(0.0, 1.0)], &ProposeConfig::default(), &mut rng).unwrap();
            assert!((score(x[0]) - v).abs() < 1e-15);
            assert!(v >= grid_max - 1e-6, "seed {seed}: {v} < grid {grid_max}");
        }
    }
}

#[test]
fn continuous_proposal_stays_in_bounds_and_is_deterministic() {
    let mut rng = rng_from_seed(5);
    let cfg = ProposeConfig {
        random_samples: 200,
        local_starts: 2,
        local_iters: 20,
    };
    for _ in 0..100 {
        let d = rng.random_range(1..5);
        let n = rng.random_range(1..10);
        let model = random_model(&mut rng, n, d);
        let seed = rng.random::<u64>();
        let bounds = vec![(0.0, 1.0); d];
        let (a, va) = propose_continuous(
            &model,
            &AcquisitionSpec::ei(0.01),
            &bounds,
            &cfg,
            &mut rng_from_seed(seed),
        )
        .unwrap();
        let (b, vb) = propose_continuous(
            &model,
            &AcquisitionSpec::ei(0.01),
            &bounds,
            &cfg,
            &mut rng_from_seed(seed),
        )
        .unwrap();
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, b);
        assert_eq!(va.to_bits(), vb.to_bits());
    }
}

#[test]
fn discrete_proposal_equals_brute_force() {
    let mut rng = rng_from_seed(6);
    for _ in 0..1000 {
        let d = rng.random_range(1..4);
        let n = rng.random_range(1..6);
        let model = random_model(&mut rng, n, d);
        let m = rng.random_range(1..20);
        let cands: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let acq = if rng.random_bool(0.5) {
            AcquisitionSpec::ei(0.01)
        } else {
            AcquisitionSpec::ucb(rng.random_range(0.0..3.0))
        };
        let best = model.best_target().unwrap();
        let scores: Vec<f64> = cands
            .iter()
            .map(|c| {
                let p = model.predict(c).unwrap();
                acquisition_value(&acq, p.mean, p.variance, best).unwrap()
            })
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected = scores.iter().position(|&s| s == top).unwrap();
        assert_eq!(propose_discrete(&model, &acq, &cands).unwrap(), expected);
    }
}

#[test]
fn discrete_proposal_edge_cases() {
    let mut rng = rng_from_seed(7);
    let model = random_model(&mut rng, 3, 2);
    let acq = AcquisitionSpec::ucb(1.0);
    assert_eq!(propose_discrete(&model, &acq, &[vec![0.2, 0.2]]).unwrap(), 0);
    let twins = vec![vec![0.4, 0.9], vec![0.4, 0.9]];
    assert_eq!(propose_discrete(&model, &acq, &twins).unwrap(), 0);
    assert!(matches!(
        propose_discrete(&model, &acq, &[]),
        Err(Error::EmptyCandidates)
    ));
}

#[test]
fn ucb_choice_invariant_under_joint_positive_scaling() {
    let mut rng = rng_from_seed(8);
    for _ in 0..200 {
        let d = rng.random_range(1..4);
        let n = rng.random_range(1..8);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.5)).collect();
        let (sf2, sn2) = (rng.random_range(0.1..2.0), rng.random_range(1e-6..1e-2));
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: f64 = rng.random_range(0.01..100.0);
        let cands: Vec<Vec<f64>> = (0..15).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let kappa = rng.random_range(0.0..3.0);
        let build = |scale: f64| {
            let w = w.clone();
            GpModel::fit(
                KernelSpec::new(KernelVariant::Matern52, scale * scale * sf2, ls.clone()).unwrap(),
                scale * scale * sn2,
                PriorMean::from_fn(move |x| scale * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()),
                xs.clone(),
                ys.iter().map(|y| scale * y).collect(),
            )
            .unwrap()
        };
        let acq = AcquisitionSpec::ucb(kappa);
        assert_eq!(
            propose_discrete(&build(1.0), &acq, &cands).unwrap(),
            propose_discrete(&build(c), &acq, &cands).unwrap()
        );
    }
}

#[test]
fn bo_finds_center_of_2d_bowl() {
    let mut finals: Vec<f64> = (0..10)
        .map(|seed| {
            let mut f = |x: &[f64]| -((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2));
            let t = bo_run(&mut f, 2, 30, &BoConfig::default(), seed).unwrap();
            assert_eq!(t.records.len(), 30);
            for w in t.records.windows(2) {
                assert!(w[1].best_so_far >= w[0].best_so_far);
            }
            t.best().unwrap()
        })
        .collect();
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[4] + finals[5]);
    assert!(median >= -0.01, "median {median}, all {finals:?}");
}

#[test]
fn bo_is_deterministic_per_seed() {
    let run = || {
        let mut f = |x: &[f64]| (6.0 * x[0]).sin() * x[1];
        bo_run(&mut f, 2, 12, &BoConfig::default(), 99).unwrap()
    };
    assert_eq!(run(), run());
}
