use drivecast_core::hyperopt::{
    expected_improvement, lengthscale_grid, matern52, minimize, tune, GaussianProcess, SearchSpace,
    TrialKind, TrialValue, TunerConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct dense evaluation of the GP with given hyperparameters:
/// returns (posterior mean at `q`, profiled log marginal likelihood).
fn dense_oracle(x: &[Vec<f64>], y: &[f64], ls: &[f64], jitter: f64, q: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / sd));
    let kern = |a: &[f64], b: &[f64]| {
        let r = a
            .iter()
            .zip(b)
            .zip(ls)
            .map(|((u, v), l)| ((u - v) / l).powi(2))
            .sum::<f64>()
            .sqrt();
        let s = 5f64.sqrt() * r;
        (1.0 + s + s * s / 3.0) * (-s).exp()
    };
    let k = DMatrix::from_fn(n, n, |i, j| {
        kern(&x[i], &x[j]) + if i == j { jitter } else { 0.0 }
    });
    let chol = k.clone().cholesky().expect("positive definite");
    let alpha = chol.solve(&ys);
    let kq = DVector::from_iterator(n, x.iter().map(|xi| kern(xi, q)));
    let post = mean + sd * kq.dot(&alpha);
    let sigma2 = ys.dot(&alpha) / n as f64;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ll = -0.5 * n as f64 * sigma2.ln()
        - 0.5 * logdet
        - 0.5 * n as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    (post, ll)
}

#[test]
fn sine_posterior_matches_dense_oracle() {
    let x: Vec<Vec<f64>> = [0.05, 0.3, 0.5, 0.72, 0.95]
        .iter()
        .map(|&v| vec![v])
        .collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
    let gp = GaussianProcess::fit(&x, &y).unwrap();
    for i in 0..=20 {
        let q = [i as f64 / 20.0];
        let (want, _) = dense_oracle(&x, &y, gp.lengthscales(), gp.jitter(), &q);
        let got = gp.posterior(&q).mean;
        assert!((got - want).abs() < 1e-8, "q {q:?}: {got} vs {want}");
    }
}

#[test]
fn lengthscale_maximizes_likelihood_on_grid() {
    let x: Vec<Vec<f64>> = [0.05, 0.3, 0.5, 0.72, 0.95]
        .iter()
        .map(|&v| vec![v])
        .collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
    let gp = GaussianProcess::fit(&x, &y).unwrap();
    let best = lengthscale_grid()
        .into_iter()
        .map(|l| (l, dense_oracle(&x, &y, &[l], 1e-6, &[0.0]).1))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!((gp.lengthscales()[0] - best.0).abs() < 1e-12);
    assert!((gp.log_likelihood() - best.1).abs() < 1e-8);
}

#[test]
fn interpolates_observed_points() {
    let x = vec![vec![0.2, 0.4, 0.1, 0.9, 0.5], vec![0.7, 0.1, 0.6, 0.3, 0.2]];
    let y = [0.83, 0.61];
    let gp = GaussianProcess::fit(&x, &y).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert!((gp.posterior(xi).mean - yi).abs() < 1e-6);
    }
}

#[test]
fn ei_vanishes_at_incumbent() {
    let x: Vec<Vec<f64>> = [0.1, 0.35, 0.6, 0.9]
        .iter()
        .map(|&v| vec![v, 1.0 - v])
        .collect();
    let y = [2.0, 0.5, 1.5, 3.0];
    let gp = GaussianProcess::fit(&x, &y).unwrap();
    let best = gp.incumbent();
    assert!(expected_improvement(gp.posterior(&x[1]), best) <= 1e-9);
    assert!(expected_improvement(gp.posterior(&[0.5, 0.2]), best) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ei_is_nonnegative(seed in any::<u64>(), q in prop::collection::vec(0.0f64..1.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gp = GaussianProcess::fit(&x, &y).unwrap();
        let p = gp.posterior(&q);
        prop_assert!(p.std >= 0.0);
        prop_assert!(expected_improvement(p, gp.incumbent()) >= 0.0);
    }
}

#[test]
fn matern_is_a_correlation() {
    assert_eq!(matern52(0.0), 1.0);
    let mut prev = 1.0;
    for i in 1..50 {
        let v = matern52(i as f64 * 0.1);
        assert!(v < prev && v > 0.0);
        prev = v;
    }
}

fn unit_distance(space: &SearchSpace, a: &[f64], b: &[f64]) -> f64 {
    let ua = space.to_unit(a);
    let ub = space.to_unit(b);
    ua.iter()
        .zip(&ub)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn bowl_beats_random_search() {
    let space = SearchSpace::forecaster_default();
    let centre = space.from_unit(&[0.35, 0.6, 0.44, 0.55, 0.4]);
    let bowl = |x: &[f64]| -> f64 {
        let u = space.to_unit(x);
        let c = space.to_unit(&centre);
        u.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let diagonal = (space.len() as f64).sqrt();
    let (mut wins, mut close) = (0, 0);
    for seed in 0..10u64 {
        let cfg = TunerConfig {
            seed,
            ..Default::default()
        };
        let out = minimize(&space, &cfg, &mut |x| Ok(bowl(x))).unwrap();
        let best = out.best_trial().unwrap();
        if unit_distance(&space, &best.point, &centre) <= 0.15 * diagonal {
            close += 1;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let random_best = (0..12)
            .map(|_| {
                let u: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                bowl(&space.from_unit(&u))
            })
            .fold(f64::INFINITY, f64::min);
        if best.metric.unwrap() < random_best {
            wins += 1;
        }
    }
    assert!(close >= 7, "near the minimum in {close} of 10 seeds");
    assert!(wins >= 7, "beat random search in {wins} of 10 seeds");
}

#[test]
fn constant_objective_records_every_trial() {
    let space = SearchSpace::forecaster_default();
    let out = minimize(&space, &TunerConfig::default(), &mut |_| Ok(0.25)).unwrap();
    assert_eq!(out.trials.len(), 12);
    assert!(space.contains(&out.best_trial().unwrap().point));
    assert_eq!(
        out.trials
            .iter()
            .filter(|t| t.kind == TrialKind::Random)
            .count(),
        2
    );
}

#[test]
fn suggestions_respect_bounds_and_integrality() {
    let space = SearchSpace::forecaster_default();
    for seed in 0..4 {
        let cfg = TunerConfig {
            seed,
            ..Default::default()
        };
        let (best, trials) = tune(&space, &cfg, &mut |hp, _| {
            Ok(TrialValue {
                metric: (hp.r - 0.3).powi(2) + (hp.t_p as f64 - 22.0).powi(2) / 100.0 + hp.w,
                history: None,
            })
        })
        .unwrap();
        assert_eq!(trials.len(), 12);
        for t in &trials {
            let x = [t.hp.r, t.hp.w, t.hp.t_p as f64, t.hp.u_ed as f64, t.hp.xi];
            assert!(space.contains(&x), "{x:?}");
        }
        let min = trials
            .iter()
            .filter_map(|t| t.metric)
            .fold(f64::INFINITY, f64::min);
        let best_metric = trials
            .iter()
            .find(|t| t.hp == best)
            .unwrap()
            .metric
            .unwrap();
        assert_eq!(best_metric, min);
    }
}

#[test]
fn incumbent_is_monotone_and_runs_reproduce() {
    let space = SearchSpace::forecaster_default();
    let f = |x: &[f64]| Ok((x[0] - 0.4).abs() + (x[3] - 80.0).abs() / 40.0 + x[4]);
    let cfg = TunerConfig {
        seed: 17,
        ..Default::default()
    };
    let a = minimize(&space, &cfg, &mut |x| f(x)).unwrap();
    let b = minimize(&space, &cfg, &mut |x| f(x)).unwrap();
    let points = |o: &drivecast_core::hyperopt::TuneOutcome| {
        o.trials.iter().map(|t| t.point.clone()).collect::<Vec<_>>()
    };
    assert_eq!(points(&a), points(&b));
    let trace = a.incumbent_trace();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
}
