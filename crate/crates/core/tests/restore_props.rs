mod common;

use common::*;
use gdp_core::image::{add_gaussian_noise, Image};
use gdp_core::restore::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn w_changes_sign_at_the_closed_form_roots(lt in -1.0f64..1.5, lb in -6.0f64..-1.0, frac in 0.0f64..0.999) {
        let t = 10f64.powf(lt);
        // Keep T²b below 1/8.
        let b = (10f64.powf(lb)).min(frac * 0.125 / (t * t)).max(1e-12);
        let (vl, vu) = lemma_roots(t, b).expect("roots exist");
        let w = |v: f64| diffusion_coefficient(v, t, b);
        let peak = 3.0 * b; // W is minimal at v = 3b
        let bl = bisect(w, 0.0, peak);
        let bu = bisect(w, peak, 1e3 * vu.max(1.0));
        prop_assert!((bl - vl).abs() <= 1e-9 * vl.max(1.0), "{} vs {}", bl, vl);
        prop_assert!((bu - vu).abs() <= 1e-9 * vu.max(1.0), "{} vs {}", bu, vu);
        prop_assert!(w(0.5 * (vl + vu)) < 0.0);
        prop_assert!(w(0.5 * vl) > 0.0 && w(2.0 * vu) > 0.0);
    }

    #[test]
    fn w_is_nonnegative_without_roots(lt in -1.0f64..1.5, k in 1.0f64..100.0) {
        let t = 10f64.powf(lt);
        let b = k * 0.125 / (t * t);
        prop_assert!(lemma_roots(t, b).is_none());
        let mut min = f64::INFINITY;
        for i in 0..=4000 {
            let v = 1e6 * (i as f64 / 4000.0).powi(4);
            min = min.min(diffusion_coefficient(v, t, b));
        }
        min = min.min(diffusion_coefficient(3.0 * b, t, b));
        prop_assert!(min >= -1e-12);
    }

    #[test]
    fn energy_gradient_matches_finite_differences(u in sized_image(8, 8), i in sized_image(8, 8), ll in -3.0f64..-1.0) {
        let (lambda, t, b) = (10f64.powf(ll), 2.0, 1e-2);
        let g = energy_gradient(&u, &i, lambda, t, b).unwrap();
        let h = 1e-6;
        let mut num = Vec::new();
        for k in 0..64 {
            let mut p = u.clone();
            p.data_mut()[k] += h;
            let mut m = u.clone();
            m.data_mut()[k] -= h;
            num.push((energy(&p, &i, lambda, t, b).unwrap() - energy(&m, &i, lambda, t, b).unwrap()) / (2.0 * h));
        }
        let diff = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-5 * norm, "relative {}", diff / norm);
    }
}

#[test]
fn lambda_zero_is_identity() {
    let img = add_gaussian_noise(&gdp_core::synth::dead_leaves(32, 32, 1), 0.1, 2);
    let (u, _) = denoise(&img, &DiffusionConfig { lambda: 0.0, ..Default::default() }).unwrap();
    assert_eq!(u, img);
}

#[test]
fn denoise_energy_is_nonincreasing() {
    for (seed, form) in [(1, DiffusionForm::Divergence), (2, DiffusionForm::Divergence)] {
        let clean = gdp_core::synth::piecewise_smooth(48, 48, seed);
        let noisy = add_gaussian_noise(&clean, 0.1, seed + 9);
        let cfg = DiffusionConfig { lambda: 0.01, t_pr: 2.25, b_pr: 9e-5, multiscale_levels: 1, form, ..Default::default() };
        let (u, rep) = denoise(&noisy, &cfg).unwrap();
        for w in rep.log.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-9, "{} -> {}", w[0].energy, w[1].energy);
        }
        let e0 = energy(&noisy, &noisy, 0.01, 2.25, 9e-5).unwrap();
        assert!(rep.final_energy <= e0);
        let gain = gdp_core::quality::psnr(&clean, &u).unwrap() - gdp_core::quality::psnr(&clean, &noisy).unwrap();
        assert!(gain > 3.0, "gain {gain}");
    }
}

#[test]
fn dc_iteration_decreases_energy_and_matches_diffusion() {
    let clean = gdp_core::synth::piecewise_smooth(32, 32, 4);
    let noisy = add_gaussian_noise(&clean, 0.1, 5);
    let (lambda, t, b) = (0.01, 2.25, 9e-5);
    let dc = DcConfig { dt: 1e6, max_iter: 2000, eps: 1e-6, ..Default::default() };
    let (_, rep) = gdp_dc_denoise(&noisy, lambda, t, b, &dc).unwrap();
    for w in rep.energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
    }
    let cfg = DiffusionConfig { lambda, t_pr: t, b_pr: b, multiscale_levels: 1, eps: 1e-6, max_iter: 2000, ..Default::default() };
    let (_, d) = denoise(&noisy, &cfg).unwrap();
    let e_dc = *rep.energies.last().unwrap();
    assert!((e_dc - d.final_energy).abs() <= 0.005 * d.final_energy.abs(), "dc {e_dc} vs {}", d.final_energy);
}

#[test]
fn tv_with_zero_weight_is_identity() {
    let img: Image = gdp_core::synth::dead_leaves(16, 16, 3);
    assert_eq!(tv_denoise(&img, &TvConfig { lambda: 0.0, max_iter: 10, eps: 1e-5 }).unwrap(), img);
}
