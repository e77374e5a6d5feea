use gdp_core::image::add_gaussian_noise;
use gdp_core::noisest::*;
use gdp_core::synth;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_is_nonincreasing_in_t(t1 in 0.0f64..50.0, dt in 0.0f64..50.0) {
        let cal = Calibration::bundled().unwrap();
        prop_assert!(cal.predict(t1 + dt) <= cal.predict(t1));
    }
}

#[test]
fn calibration_round_trips_bit_exactly() {
    let cal = Calibration::bundled().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cal.json");
    cal.save(&p).unwrap();
    let back = Calibration::load(&p).unwrap();
    assert_eq!(back, cal);
    for (a, b) in back.terms.iter().zip(&cal.terms) {
        assert_eq!(a.q.to_bits(), b.q.to_bits());
        assert_eq!(a.s.to_bits(), b.s.to_bits());
    }
}

#[test]
fn bundled_calibration_tracks_noise_on_unseen_images() {
    let cal = Calibration::bundled().unwrap();
    assert!(cal.fit_stats.r2 > 0.95);
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..3 {
        let clean = synth::dead_leaves(128, 128, 9000 + seed);
        for sigma in [0.05, 0.1, 0.2, 0.3] {
            let noisy = add_gaussian_noise(&clean, sigma, seed * 31 + 1).clamped();
            let est = estimate_sigma(&noisy, &cal).unwrap();
            total += 1;
            if (est - sigma).abs() < 0.04 {
                hits += 1;
            }
        }
    }
    assert!(hits as f64 >= 0.75 * total as f64, "{hits}/{total}");
}

#[test]
fn mixture_fit_recovers_exact_curve() {
    let data: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let t = 1.0 + i as f64 * 0.5;
            (0.8 * (-0.3 * t).exp() + 0.1 * (-0.02 * t).exp(), t)
        })
        .collect();
    let (terms, stats) = fit_mixture(&data, 2).unwrap();
    assert!(stats.rmse < 1e-6, "{stats:?}");
    assert_eq!(terms.len(), 2);
}
