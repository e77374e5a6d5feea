//! Haze removal under `I = U·t + A(1 − t)`, alternating between the latent
//! image `U` and the transmission `t`.

use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{divergence, gradient, GradientField, Image};
use crate::prior::PriorBundle;
use crate::restore::{cg_slices, screened_weighted_diagonal, screened_weighted_laplacian};

pub const T_MIN: f64 = 0.1;
/// Smoothing of `|∇ log t|` in the transmission regularizer.
pub const EPS_TV: f64 = 1e-4;
const BRIGHT_FRACTION: f64 = 0.001;

/// Mean of the brightest 0.1% of pixels (at least one).
pub fn estimate_airlight(img: &Image) -> f64 {
    let mut v = img.data().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let n = ((v.len() as f64 * BRIGHT_FRACTION).ceil() as usize).clamp(1, v.len());
    (v[..n].iter().sum::<f64>() / n as f64).clamp(0.0, 1.0)
}

/// Minimum over a `(2r+1)²` window, borders clamped.
pub fn min_filter(img: &Image, r: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let rows = Image::from_fn(w, h, |x, y| {
        (x.saturating_sub(r)..(x + r + 1).min(w)).map(|i| img.get(i, y)).fold(f64::INFINITY, f64::min)
    });
    Image::from_fn(w, h, |x, y| {
        (y.saturating_sub(r)..(y + r + 1).min(h)).map(|j| rows.get(x, j)).fold(f64::INFINITY, f64::min)
    })
}

/// Dark-channel estimate `1 − 0.95·(D − D₀)/(A − D₀)` with `D` the windowed
/// minimum and `D₀` its smallest value, projected to `[t_min, 1]`.
pub fn initial_transmission(img: &Image, airlight: f64, radius: usize, t_min: f64) -> Image {
    let dark = min_filter(img, radius);
    let floor = dark.data().iter().copied().fold(f64::INFINITY, f64::min);
    let span = (airlight - floor).max(1e-6);
    dark.map(|d| (1.0 - 0.95 * (d - floor) / span).clamp(t_min, 1.0))
}

/// `I = U·t + A(1 − t)` with `t` in `[t_min, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazeModel {
    pub airlight: f64,
    pub t: Image,
    pub t_min: f64,
}

impl HazeModel {
    pub fn new(airlight: f64, t: Image, t_min: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&airlight) {
            return Err(GdpError::Input(format!("airlight {airlight} must lie in [0, 1]")));
        }
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(GdpError::Input(format!("t_min {t_min} must lie in (0, 1)")));
        }
        if t.data().iter().any(|v| !(t_min..=1.0).contains(v)) {
            return Err(GdpError::Input("transmission outside [t_min, 1]".into()));
        }
        Ok(HazeModel { airlight, t, t_min })
    }

    /// Hazy observation of `u`.
    pub fn render(&self, u: &Image) -> Result<Image> {
        u.check_same_size(&self.t)?;
        let a = self.airlight;
        Ok(u.zip_map(&self.t, |u, t| u * t + a * (1.0 - t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DehazeConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub iters: usize,
    /// `None` estimates it from the brightest pixels.
    pub airlight: Option<f64>,
    pub t_min: f64,
    pub dark_radius: usize,
    /// Proximal step of the image update.
    pub dt: f64,
    /// Projected-gradient steps on `t` per outer round.
    pub t_steps: usize,
}

impl Default for DehazeConfig {
    fn default() -> Self {
        DehazeConfig {
            lambda: 1e-3,
            alpha: 1.0,
            iters: 10,
            airlight: None,
            t_min: T_MIN,
            dark_radius: 7,
            dt: 100.0,
            t_steps: 20,
        }
    }
}

impl DehazeConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.lambda, self.alpha, self.dt];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || self.dt == 0.0 {
            return Err(GdpError::Input("dehaze lambda, alpha must be nonnegative and dt positive".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(GdpError::Input(format!("t_min {} must lie in (0, 1)", self.t_min)));
        }
        if let Some(a) = self.airlight {
            if !(0.0..=1.0).contains(&a) {
                return Err(GdpError::Input(format!("airlight {a} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn log_tv(t: &Image) -> f64 {
    let g = gradient(&t.map(f64::ln)).expect("size checked");
    g.gx.iter().zip(&g.gy).map(|(x, y)| (x * x + y * y + EPS_TV * EPS_TV).sqrt()).sum()
}

/// `½‖U t + A(1−t) − I‖² + (λ/2) Σ [T² v + log(b + v) + α |∇ log t|_ε]`.
pub fn dehaze_energy(u: &Image, t: &Image, img: &Image, airlight: f64, prior: &PriorBundle, lambda: f64, alpha: f64) -> Result<f64> {
    u.check_same_size(img)?;
    t.check_same_size(img)?;
    let data: f64 = u
        .data()
        .iter()
        .zip(t.data())
        .zip(img.data())
        .map(|((u, t), i)| {
            let r = u * t + airlight * (1.0 - t) - i;
            r * r
        })
        .sum();
    let g = gradient(u)?;
    let t2 = prior.t_pr * prior.t_pr;
    let pr: f64 = g.gx.iter().zip(&g.gy).map(|(x, y)| {
        let v = x * x + y * y;
        t2 * v + (prior.b_pr + v).ln()
    }).sum();
    Ok(0.5 * data + 0.5 * lambda * (pr + alpha * log_tv(t)))
}

/// Pointwise minimizer of the data term for fixed `t`.
pub fn closed_form_latent(img: &Image, t: &Image, airlight: f64) -> Image {
    img.zip_map(t, |i, t| (i - airlight * (1.0 - t)) / t)
}

/// `(1 + dt t² − dt λ div ψ∇) U' = U + dt t (I − A(1−t))`.
fn u_step(u: &Image, t: &Image, img: &Image, airlight: f64, prior: &PriorBundle, lambda: f64, dt: f64) -> Result<Image> {
    let (w, h) = (u.width(), u.height());
    let g = gradient(u)?;
    let t2 = prior.t_pr * prior.t_pr;
    let psi: Vec<f64> = g.gx.iter().zip(&g.gy).map(|(x, y)| t2 + 1.0 / (prior.b_pr + x * x + y * y)).collect();
    let tt: Vec<f64> = t.data().iter().map(|v| v * v).collect();
    let rhs: Vec<f64> = u
        .data()
        .iter()
        .zip(t.data())
        .zip(img.data())
        .map(|((u, t), i)| u + dt * t * (i - airlight * (1.0 - t)))
        .collect();
    let mut diag = screened_weighted_diagonal(&psi, w, h, 1.0, dt * lambda);
    for (d, q) in diag.iter_mut().zip(&tt) {
        *d += dt * q;
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        screened_weighted_laplacian(x, &psi, w, h, 1.0, dt * lambda, out);
        for ((o, xi), q) in out.iter_mut().zip(x).zip(&tt) {
            *o += dt * q * xi;
        }
    };
    let mut x = u.data().to_vec();
    cg_slices(&apply, Some(&diag), &rhs, &mut x, 1e-9, 2000)?;
    Image::new(w, h, x)
}

/// Gradient of the `t`-dependent terms.
fn t_gradient(u: &Image, t: &Image, img: &Image, airlight: f64, lambda: f64, alpha: f64) -> Result<Image> {
    let s = t.map(f64::ln);
    let mut g = gradient(&s)?;
    for (x, y) in g.gx.iter_mut().zip(g.gy.iter_mut()) {
        let n = (*x * *x + *y * *y + EPS_TV * EPS_TV).sqrt();
        *x /= n;
        *y /= n;
    }
    let div = divergence(&GradientField::new(t.width(), t.height(), g.gx, g.gy)?);
    let mut out = Vec::with_capacity(t.len());
    for (((u, t), i), d) in u.data().iter().zip(t.data()).zip(img.data()).zip(div.data()) {
        let r = u * t + airlight * (1.0 - t) - i;
        out.push((u - airlight) * r - 0.5 * lambda * alpha * d / t);
    }
    Image::new(t.width(), t.height(), out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DehazeReport {
    pub airlight: f64,
    /// Energy after initialization and after each outer round.
    pub energies: Vec<f64>,
    pub rejected_t_steps: usize,
}

pub fn dehaze(img: &Image, prior: &PriorBundle, cfg: &DehazeConfig) -> Result<(Image, HazeModel, DehazeReport)> {
    cfg.validate()?;
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(GdpError::Input("image contains non-finite values".into()));
    }
    if img.width() < 2 || img.height() < 2 {
        return Err(GdpError::Dimension("dehaze needs at least 2x2 pixels".into()));
    }
    let a = cfg.airlight.unwrap_or_else(|| estimate_airlight(img));
    let mut t = initial_transmission(img, a, cfg.dark_radius, cfg.t_min);
    let mut u = closed_form_latent(img, &t, a).clamped();
    let energy = |u: &Image, t: &Image| dehaze_energy(u, t, img, a, prior, cfg.lambda, cfg.alpha);
    let mut e = energy(&u, &t)?;
    let mut energies = vec![e];
    let mut rejected = 0usize;
    let mut tau = 1.0;
    for _ in 0..cfg.iters {
        // Image step; the frozen-ψ quadratic majorizes the energy.
        let mut dt = cfg.dt;
        for _ in 0..=10 {
            let next = u_step(&u, &t, img, a, prior, cfg.lambda, dt)?;
            let en = energy(&next, &t)?;
            if en.is_finite() && en <= e {
                u = next;
                e = en;
                break;
            }
            dt *= 0.5;
        }
        // Projected gradient steps on t with backtracking.
        for _ in 0..cfg.t_steps {
            let g = t_gradient(&u, &t, img, a, cfg.lambda, cfg.alpha)?;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = t.zip_map(&g, |t, g| (t - tau * g).clamp(cfg.t_min, 1.0));
                let en = energy(&u, &cand)?;
                if en.is_finite() && en <= e {
                    t = cand;
                    e = en;
                    accepted = true;
                    tau *= 1.5;
                    break;
                }
                tau *= 0.5;
                rejected += 1;
            }
            if !accepted {
                break;
            }
        }
        energies.push(e);
    }
    let model = HazeModel { airlight: a, t, t_min: cfg.t_min };
    Ok((u, model, DehazeReport { airlight: a, energies, rejected_t_steps: rejected }))
}

/// Number of 4-connected components above Otsu's threshold.
pub fn foreground_components(img: &Image) -> usize {
    use image::{GrayImage, Luma};
    use imageproc::region_labelling::{connected_components, Connectivity};
    let g = GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([(img.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let level = imageproc::contrast::otsu_level(&g);
    let bin = GrayImage::from_fn(g.width(), g.height(), |x, y| Luma([if g.get_pixel(x, y)[0] > level { 255 } else { 0 }]));
    let labels = connected_components(&bin, Connectivity::Four, Luma([0u8]));
    labels.pixels().map(|p| p[0]).max().unwrap_or(0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn airlight_examples() {
        assert_eq!(estimate_airlight(&Image::filled(20, 20, 0.37)), 0.37);
        let mut img = Image::filled(40, 40, 0.3);
        for y in 0..5 {
            for x in 0..5 {
                img.set(x, y, 1.0);
            }
        }
        assert!((estimate_airlight(&img) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_filter_matches_brute_force() {
        let img = crate::synth::dead_leaves(17, 13, 2);
        let m = min_filter(&img, 2);
        for y in 0..13usize {
            for x in 0..17usize {
                let mut want = f64::INFINITY;
                for j in y.saturating_sub(2)..(y + 3).min(13) {
                    for i in x.saturating_sub(2)..(x + 3).min(17) {
                        want = want.min(img.get(i, j));
                    }
                }
                assert_eq!(m.get(x, y), want);
            }
        }
    }
}
