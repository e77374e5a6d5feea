mod common;

use common::*;
use gdp_core::dehaze::*;
use gdp_core::image::Image;
use gdp_core::prior::PriorBundle;
use gdp_core::{quality, synth};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_form_minimizes_the_data_term(
        img in sized_image(6, 6),
        traw in proptest::collection::vec(0.1f64..1.0, 36),
        a in 0.3f64..1.0,
        k in 0usize..36,
        delta in -0.2f64..0.2,
    ) {
        let p = PriorBundle::bundled();
        let t = Image::new(6, 6, traw).unwrap();
        let u = closed_form_latent(&img, &t, a);
        let e = dehaze_energy(&u, &t, &img, a, &p, 0.0, 0.0).unwrap();
        prop_assert!(e.abs() < 1e-20);
        let mut v = u.clone();
        v.data_mut()[k] += delta;
        // Hand formula: ½ (δ t)².
        let want = 0.5 * (delta * t.data()[k]).powi(2);
        let got = dehaze_energy(&v, &t, &img, a, &p, 0.0, 0.0).unwrap();
        prop_assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn initial_transmission_is_in_range(img in image_strategy(4, 20), a in 0.05f64..1.0, r in 0usize..4) {
        let t = initial_transmission(&img, a, r, T_MIN);
        prop_assert!(t.data().iter().all(|v| (T_MIN..=1.0).contains(v)));
    }
}

#[test]
fn energy_nonincreasing_and_t_in_range() {
    let p = calibrated_prior();
    for seed in 0..3 {
        let sc = synth::haze_scene(64, 64, seed);
        let cfg = DehazeConfig { iters: 6, ..Default::default() };
        let (_, m, rep) = dehaze(&sc.hazy, &p, &cfg).unwrap();
        for w in rep.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(m.t.data().iter().all(|v| (cfg.t_min..=1.0).contains(v)));
        HazeModel::new(m.airlight, m.t.clone(), m.t_min).unwrap();
    }
}

#[test]
fn haze_free_input_is_a_fixed_point() {
    let p = calibrated_prior();
    let clean = synth::haze_scene(64, 64, 3).clean;
    let (u, m, _) = dehaze(&clean, &p, &DehazeConfig::default()).unwrap();
    assert!(u.rms_diff(&clean) < 0.02, "rms {}", u.rms_diff(&clean));
    assert!(m.t.mean() > 0.98);
}

#[test]
fn synthetic_composite_is_dehazed() {
    let p = calibrated_prior();
    let sc = synth::haze_scene(96, 96, 1);
    assert!((estimate_airlight(&sc.hazy) - sc.airlight).abs() < 0.05);
    let (u, m, _) = dehaze(&sc.hazy, &p, &DehazeConfig::default()).unwrap();
    let u = u.clamped();
    let gain = quality::psnr(&sc.clean, &u).unwrap() - quality::psnr(&sc.clean, &sc.hazy).unwrap();
    assert!(gain >= 3.0, "gain {gain}");
    assert_eq!(foreground_components(&sc.hazy), 1);
    assert!(foreground_components(&u) >= 2);
    let rendered = m.render(&u).unwrap();
    assert!(rendered.rms_diff(&sc.hazy) < 0.05);
}

#[test]
fn invalid_configs_are_rejected() {
    let p = PriorBundle::bundled();
    let img = synth::haze_scene(16, 16, 0).hazy;
    for cfg in [
        DehazeConfig { t_min: 0.0, ..Default::default() },
        DehazeConfig { lambda: -1.0, ..Default::default() },
        DehazeConfig { airlight: Some(1.5), ..Default::default() },
    ] {
        assert!(dehaze(&img, &p, &cfg).is_err());
    }
    assert!(HazeModel::new(0.5, Image::filled(4, 4, 0.05), 0.1).is_err());
}
