mod common;

use common::*;
use gdp_core::image::add_gaussian_noise;
use gdp_core::quality::*;
use gdp_core::spectrum::Metric;
use gdp_core::synth;
use proptest::prelude::*;

fn list() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..30).prop_flat_map(|n| {
        (proptest::collection::vec(-10.0f64..10.0, n), proptest::collection::vec(-10.0f64..10.0, n))
    })
}

// O(n²) concordance count with ties excluded on both sides.
fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut n1, mut n2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
            let b = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
            s += a * b;
            n1 += a * a;
            n2 += b * b;
        }
    }
    s / (n1 * n2).sqrt()
}

proptest! {
    #[test]
    fn correlations_bounded((x, y) in list()) {
        if let Ok(c) = rank_correlations(&x, &y) {
            for v in [c.pcc, c.scc, c.kcc] {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn pcc_affine_invariant((x, y) in list(), s in 0.01f64..100.0, o in -50.0f64..50.0) {
        let z: Vec<f64> = x.iter().map(|v| s * v + o).collect();
        if let (Ok(a), Ok(b)) = (rank_correlations(&x, &y), rank_correlations(&z, &y)) {
            prop_assert!((a.pcc - b.pcc).abs() < 1e-9);
            prop_assert!((a.scc - b.scc).abs() < 1e-9);
            prop_assert!((a.kcc - b.kcc).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_matches_pairwise_oracle((x, y) in list()) {
        // Coarse rounding forces ties.
        let x: Vec<f64> = x.iter().map(|v| v.round()).collect();
        let y: Vec<f64> = y.iter().map(|v| (v / 3.0).round()).collect();
        if let Ok(k) = kendall(&x, &y) {
            prop_assert!((k - kendall_oracle(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_without_ties_matches_rank_formula(mut x in proptest::collection::vec(-1e3f64..1e3, 3..25), seed in 0u64..1000) {
        x.sort_by(f64::total_cmp);
        x.dedup();
        prop_assume!(x.len() >= 3);
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed * 31) % 1009) as f64 + i as f64 * 1e-6).collect();
        let (rx, ry) = (average_ranks(&x), average_ranks(&y));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        let want = 1.0 - 6.0 * d2 / (n as f64 * ((n * n) as f64 - 1.0));
        prop_assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn prior_score_nonnegative(img in image_strategy(8, 24)) {
        let p = gdp_core::prior::PriorBundle::bundled();
        for m in Metric::ALL {
            prop_assert!(score(&img, Reference::Prior(&p), m).unwrap() >= 0.0);
        }
    }
}

#[test]
fn average_ranks_share_ties() {
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
}

#[test]
fn zero_variance_is_an_error() {
    assert!(rank_correlations(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(rank_correlations(&[1.0, 2.0], &[1.0, 2.0]).is_err());
}

#[test]
fn self_scores_are_zero() {
    let p = calibrated_prior();
    let img = synth::dead_leaves(64, 64, 2);
    for m in Metric::ALL {
        assert!(score(&img, Reference::Image(&img), m).unwrap().abs() < 1e-12, "{m:?}");
    }
    let nf = score(&img, Reference::NaturalnessFactor { reference: &img, prior: &p }, Metric::Hellinger).unwrap();
    assert_eq!(nf, 0.0);
    assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn score_increases_with_noise() {
    for seed in 0..3 {
        let img = synth::dead_leaves(96, 96, seed);
        let s: Vec<f64> = [0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|&sg| score(&add_gaussian_noise(&img, sg, 100 + seed), Reference::Image(&img), Metric::Hellinger).unwrap())
            .collect();
        assert!(s.windows(2).all(|w| w[1] > w[0]), "{s:?}");
    }
}

#[test]
fn psnr_matches_hand_value() {
    let a = gdp_core::image::Image::filled(4, 4, 0.5);
    let b = gdp_core::image::Image::filled(4, 4, 0.6);
    // MSE 0.01 → 20 dB.
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}
