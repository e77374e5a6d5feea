#![allow(dead_code)]

use gdp_core::image::Image;
use proptest::prelude::*;

pub fn image_strategy(min: usize, max: usize) -> impl Strategy<Value = Image> {
    (min..=max, min..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| Image::new(w, h, d).unwrap())
    })
}

pub fn sized_image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| Image::new(w, h, d).unwrap())
}

/// Low-frequency image built from a few random cosines.
pub fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64)> =
        (0..4).map(|_| (r.random_range(0.0..3.0), r.random_range(0.0..3.0), r.random_range(0.0..6.3), r.random_range(0.05..0.2))).collect();
    Image::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        0.5 + terms.iter().map(|(fx, fy, ph, a)| a * (std::f64::consts::PI * (fx * u + fy * v) + ph).cos()).sum::<f64>()
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Bundled histogram with `t_pr` re-estimated by the toolkit's own estimator.
pub fn calibrated_prior() -> gdp_core::prior::PriorBundle {
    let mut p = gdp_core::prior::PriorBundle::bundled();
    p.t_pr = gdp_core::models::fit_t_hist(p.histogram().unwrap(), p.domain_convention, p.t_estimator).unwrap();
    p.published_defaults = false;
    p
}

/// Dense least squares `min ‖Du − g‖²` with `mean(u) = anchor`.
pub fn dense_oracle(g: &gdp_core::image::GradientField, anchor: f64) -> Image {
    let (w, h) = (g.width(), g.height());
    let n = w * h;
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                rows.push((i + 1, i, g.gx[i]));
            }
            if y + 1 < h {
                rows.push((i + w, i, g.gy[i]));
            }
        }
    }
    let c = 1.0 / n as f64;
    let mut a = nalgebra::DMatrix::from_element(n, n, c);
    let mut b = nalgebra::DVector::from_element(n, anchor);
    for &(p, m, v) in &rows {
        a[(p, p)] += 1.0;
        a[(m, m)] += 1.0;
        a[(p, m)] -= 1.0;
        a[(m, p)] -= 1.0;
        b[p] += v;
        b[m] -= v;
    }
    let u = a.cholesky().expect("positive definite").solve(&b);
    Image::new(w, h, u.as_slice().to_vec()).unwrap()
}

pub fn random_field(w: usize, h: usize, seed: u64) -> gdp_core::image::GradientField {
    let a = gdp_core::synth::dead_leaves(w, h, seed);
    let b = gdp_core::image::add_gaussian_noise(&Image::filled(w, h, 0.0), 0.05, seed + 1);
    let ga = gdp_core::image::gradient(&a).unwrap();
    let mut g = gdp_core::image::GradientField::new(w, h, ga.gx.iter().zip(b.data()).map(|(x, n)| x + n).collect(), ga.gy).unwrap();
    g.zero_masked();
    g
}

pub fn family_marginal(m: &gdp_core::models::ModelParams, domain: gdp_core::models::DomainConvention) -> gdp_core::spectrum::Marginal1D {
    gdp_core::spectrum::Marginal1D::from_fn(|k| gdp_core::models::eval_log_pdf(m, &[domain.coord(k)]).unwrap().exp()).unwrap()
}

/// Profiled objective of the closed form: best offset for a given `T`.
pub fn profiled(m: &gdp_core::spectrum::Marginal1D, t: f64) -> f64 {
    let r: Vec<f64> = m
        .nonzero()
        .filter(|&(k, _)| k != 0)
        .map(|(k, p)| {
            let g = k as f64 / 255.0;
            p.ln() + t * t * g * g + 2.0 * g.abs().ln()
        })
        .collect();
    let c = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|v| (v - c).powi(2)).sum()
}

pub fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let (c, d) = (b - phi * (b - a), a + phi * (b - a));
        if f(c) < f(d) { b = d } else { a = c }
    }
    0.5 * (a + b)
}

/// Sign-change bisection on `[a, b]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if (f(m) < 0.0) == (fa < 0.0) { a = m } else { b = m }
    }
    0.5 * (a + b)
}
