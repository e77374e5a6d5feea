mod common;

use common::*;
use gdp_core::models::*;
use gdp_core::spectrum::Marginal1D;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn model2_is_quasi_concave_along_rays(
        a2 in 0.0f64..50.0, b2 in 1e-6f64..1.0, c2 in -10.0f64..10.0, theta in 0.0f64..std::f64::consts::TAU
    ) {
        let m = ModelParams::Model2 { a2, b2, c2 };
        let (cx, sy) = (theta.cos(), theta.sin());
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let r = i as f64 / 100.0;
            let v = eval_log_pdf(&m, &[r * cx, r * sy]).unwrap();
            prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn closed_form_matches_direct_minimization(t0 in 0.5f64..8.0, noise in 0.0f64..0.3, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth = ModelParams::Model2 { a2: t0 * t0, b2: 1e-9, c2: 0.0 };
        let clean = family_marginal(&truth, DomainConvention::Unit);
        let jitter: Vec<f64> = (0..511).map(|_| 1.0 + noise * r.random_range(-1.0..1.0)).collect();
        let m = Marginal1D::from_fn(|k| clean.get(k) * jitter[(k + 255) as usize]).unwrap();
        let t = fit_t_closed_form(&m, DomainConvention::Unit).unwrap();
        let oracle = golden(|t| profiled(&m, t), 0.0, 50.0);
        prop_assert!((t - oracle).abs() < 1e-4, "{t} vs {oracle}");
    }
}

#[test]
fn model1_is_quasi_concave_along_rays() {
    let m = ModelParams::Model1 { a1: 8.37, b1: 0.53, c1: -6.3e-5 };
    for i in 0..1000 {
        let th = i as f64 * std::f64::consts::TAU / 1000.0;
        let mut prev = f64::INFINITY;
        for j in 0..256 {
            let r = j as f64;
            let v = eval_log_pdf(&m, &[r * th.cos(), r * th.sin()]).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}

#[test]
fn closed_form_recovers_model2_marginal_t() {
    for i in 0..10 {
        let t0 = 0.5 + 0.8 * i as f64;
        let m = family_marginal(&ModelParams::Model2 { a2: t0 * t0, b2: 1e-9, c2: 1.0 }, DomainConvention::Unit);
        let t = fit_t_closed_form(&m, DomainConvention::Unit).unwrap();
        assert!((t / t0 - 1.0).abs() < 0.01, "{t0}: {t}");
    }
}

#[test]
fn fit_round_trips_each_family() {
    let d = DomainConvention::Bins;
    let cases = [
        ModelParams::Model1 { a1: 3.66, b1: 0.58, c1: -2.4e-4 },
        ModelParams::Model2 { a2: 6.21e-5, b2: 2.39e-2 * 255.0, c2: -5.24 },
        ModelParams::HyperLap { a0: 0.9, b0: 0.6, c0: -1.0 },
        ModelParams::Laplace { a0: 0.05, c0: -2.0 },
        ModelParams::Gauss { a0: 1e-3, c0: -3.0 },
    ];
    for truth in cases {
        let m = family_marginal(&truth, d);
        let r = fit(FitInput::Marginal(&m), truth.family(), d).unwrap();
        assert!(r.r2 >= 0.99, "{:?}: r2 {}", truth.family(), r.r2);
        let pairs: Vec<(f64, f64)> = match (truth, r.params) {
            (ModelParams::Model1 { a1, b1, c1 }, ModelParams::Model1 { a1: x, b1: y, c1: z }) => vec![(a1, x), (b1, y), (c1, z)],
            (ModelParams::Model2 { a2, b2, .. }, ModelParams::Model2 { a2: x, b2: y, .. }) => vec![(a2, x), (b2, y)],
            (ModelParams::HyperLap { a0, b0, .. }, ModelParams::HyperLap { a0: x, b0: y, .. }) => vec![(a0, x), (b0, y)],
            (ModelParams::Laplace { a0, .. }, ModelParams::Laplace { a0: x, .. }) => vec![(a0, x)],
            (ModelParams::Gauss { a0, .. }, ModelParams::Gauss { a0: x, .. }) => vec![(a0, x)],
            other => panic!("family changed: {other:?}"),
        };
        for (want, got) in pairs {
            assert!((got / want - 1.0).abs() < 0.02, "{:?}: {want} vs {got}", truth.family());
        }
    }
}

#[test]
fn model_histograms_are_normalized() {
    for m in [reference::MODEL1_2D_ALL, reference::MODEL2_2D_ALL] {
        let h = model_histogram(&m, DomainConvention::Bins).unwrap();
        assert!((h.total() - 1.0).abs() < 1e-9);
        assert!(model_entropy(&m, DomainConvention::Bins).unwrap() > 0.0);
    }
}
