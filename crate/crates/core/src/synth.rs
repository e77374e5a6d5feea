//! Deterministic synthetic images: natural-like dead-leaves scenes,
//! piecewise-smooth test images, and hazy composites with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::image::{convolve, gaussian_kernel, ConvMode, Image};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Occluding disks with power-law radii and mildly shaded interiors,
/// softened by a small Gaussian blur. Gradient statistics are heavy tailed.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> Image {
    dead_leaves_with(width, height, seed, 0.2, 1.0)
}

pub fn dead_leaves_with(width: usize, height: usize, seed: u64, contrast: f64, blur: f64) -> Image {
    let mut r = rng(seed);
    let mut img = Image::filled(width, height, r.random_range(0.2..0.8));
    let size = width.max(height) as f64;
    let (rmin, rmax) = (1.5f64, size / 3.0);
    let n = (width * height / 40).max(50);
    for _ in 0..n {
        // r^-3 density via inverse CDF of 1/r².
        let u: f64 = r.random();
        let rad = 1.0 / (1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax))).sqrt();
        let cx = r.random_range(-rad..width as f64 + rad);
        let cy = r.random_range(-rad..height as f64 + rad);
        let base: f64 = (0.5 + contrast * r.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
        let (sx, sy) = (r.random_range(-0.002..0.002), r.random_range(-0.002..0.002));
        let x0 = (cx - rad).floor().max(0.0) as usize;
        let x1 = ((cx + rad).ceil() as usize).min(width);
        let y0 = (cy - rad).floor().max(0.0) as usize;
        let y1 = ((cy + rad).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= rad * rad {
                    img.set(x, y, (base + sx * dx + sy * dy).clamp(0.0, 1.0));
                }
            }
        }
    }
    let radius = (3.0 * blur).ceil() as usize;
    if blur <= 0.0 || 2 * radius + 1 > width.min(height) {
        return img;
    }
    convolve(&img, &gaussian_kernel(blur, radius), ConvMode::Interior).expect("kernel fits")
}

/// A handful of flat or linearly shaded regions (disks and rectangles) on a
/// smooth background.
pub fn piecewise_smooth(width: usize, height: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    let (w, h) = (width as f64, height as f64);
    let gx = r.random_range(-0.2..0.2) / w;
    let gy = r.random_range(-0.2..0.2) / h;
    let mut img = Image::from_fn(width, height, |x, y| 0.5 + gx * (x as f64 - w / 2.0) + gy * (y as f64 - h / 2.0));
    for i in 0..8 {
        let level = r.random_range(0.1..0.9);
        let (sx, sy) = (r.random_range(-0.3..0.3) / w, r.random_range(-0.3..0.3) / h);
        let cx = r.random_range(0.1 * w..0.9 * w);
        let cy = r.random_range(0.1 * h..0.9 * h);
        let ext = r.random_range(0.08..0.25) * w.min(h);
        let disk = i % 2 == 0;
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= ext * ext
                } else {
                    dx.abs() <= ext && dy.abs() <= 0.6 * ext
                };
                if inside {
                    img.set(x, y, (level + sx * dx + sy * dy).clamp(0.0, 1.0));
                }
            }
        }
    }
    img
}

/// Contrast reduced by `factor` about the image mean.
pub fn low_contrast(img: &Image, factor: f64) -> Image {
    let m = img.mean();
    img.map(|v| m + factor * (v - m))
}

/// A hazy composite `I = U₀·t₀ + A₀(1 − t₀)` with its ground truth.
#[derive(Debug, Clone)]
pub struct HazeScene {
    pub clean: Image,
    pub transmission: Image,
    pub airlight: f64,
    pub hazy: Image,
}

/// Bright blobs on a dark background under a central glow of haze, whose
/// transmission falls towards the image center.
pub fn haze_scene(width: usize, height: usize, seed: u64) -> HazeScene {
    let mut r = rng(seed);
    let (w, h) = (width as f64, height as f64);
    let mut clean = Image::filled(width, height, 0.05);
    let blobs = [(0.3, 0.35), (0.7, 0.35), (0.3, 0.7), (0.7, 0.7)];
    for (bx, by) in blobs {
        let cx = bx * w + r.random_range(-0.03..0.03) * w;
        let cy = by * h + r.random_range(-0.03..0.03) * h;
        let rad = r.random_range(0.08..0.11) * w.min(h);
        let level = r.random_range(0.55..0.65);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= rad * rad {
                    clean.set(x, y, level);
                }
            }
        }
    }
    let s = 0.3 * w.min(h);
    let transmission = Image::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - w / 2.0, y as f64 - h / 2.0);
        1.0 - 0.8 * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp()
    });
    let airlight = 0.7;
    let hazy = clean.zip_map(&transmission, |u, t| u * t + airlight * (1.0 - t));
    HazeScene { clean, transmission, airlight, hazy }
}

/// `n` natural-like images with consecutive seeds.
pub fn natural_corpus(n: usize, width: usize, height: usize, seed: u64) -> Vec<Image> {
    (0..n as u64).map(|i| dead_leaves(width, height, seed.wrapping_add(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_in_range() {
        for img in [dead_leaves(64, 48, 3), piecewise_smooth(64, 48, 3), haze_scene(64, 48, 3).hazy] {
            let (lo, hi) = img.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
        assert_eq!(dead_leaves(32, 32, 9), dead_leaves(32, 32, 9));
        assert_ne!(dead_leaves(32, 32, 9), dead_leaves(32, 32, 10));
    }

    #[test]
    fn haze_scene_consistent() {
        let s = haze_scene(64, 64, 1);
        let (tmin, tmax) = s.transmission.min_max();
        assert!(tmin >= 0.2 - 1e-9 && tmax <= 1.0);
        let i = 10 * 64 + 20;
        let t = s.transmission.data()[i];
        let want = s.clean.data()[i] * t + s.airlight * (1.0 - t);
        assert!((s.hazy.data()[i] - want).abs() < 1e-15);
    }

    #[test]
    fn low_contrast_preserves_mean() {
        let img = dead_leaves(40, 40, 2);
        let lc = low_contrast(&img, 0.5);
        assert!((lc.mean() - img.mean()).abs() < 1e-12);
    }
}
