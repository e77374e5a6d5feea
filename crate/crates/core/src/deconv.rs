//! Blind and non-blind deconvolution with the gradient prior, and zooming.
//!
//! The latent image minimizes
//! `½‖M(U⊗K − I)‖² + (λ/2) Σ [T² |∇U|² + log(b + |∇U|²)]`
//! where `M` keeps only pixels whose kernel support lies inside the image.
//! Each image step freezes `ψ = T² + 1/(b + |∇U|²)` and solves the resulting
//! quadratic by conjugate gradients, so accepted steps never raise the energy.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{gaussian_kernel, gradient, resample_to, GradientField, Image, Kernel, ResampleMethod};
use crate::prior::PriorBundle;
use crate::restore::{cg_slices, screened_weighted_diagonal, screened_weighted_laplacian};

/// Pyramid levels whose smaller side falls below this are skipped; kernel
/// estimates from fewer edges are unreliable.
pub const MIN_LEVEL_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvConfig {
    pub kernel_size: usize,
    /// Starting weight of the prior at every pyramid level.
    pub lambda: f64,
    /// The weight shrinks by `lambda_decay` per outer iteration down to this.
    pub lambda_min: f64,
    pub lambda_decay: f64,
    /// Proximal step of each image update; larger is closer to a full solve.
    pub dt: f64,
    /// Stop a level when the RMS of `∇(Uᵢ − Uᵢ₋₁)` falls to this.
    pub eps: f64,
    pub max_outer: usize,
    pub levels: usize,
    /// Denominator floor relative to its maximum over frequencies.
    pub fft_eps: f64,
    /// Kernel taps below this fraction of the peak are dropped before projection.
    pub kernel_cutoff: f64,
    /// Prior weight and step count of the closing non-blind pass.
    pub final_lambda: f64,
    pub final_iters: usize,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        DeconvConfig {
            kernel_size: 9,
            lambda: 1e-2,
            lambda_min: 1e-4,
            lambda_decay: 0.8,
            dt: 1e3,
            eps: 1e-5,
            max_outer: 30,
            levels: 3,
            fft_eps: 1e-6,
            kernel_cutoff: 0.05,
            final_lambda: 1e-5,
            final_iters: 50,
        }
    }
}

impl DeconvConfig {
    pub fn validate(&self, w: usize, h: usize) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(GdpError::Input(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if 2 * self.kernel_size >= w.min(h) {
            return Err(GdpError::Input(format!(
                "kernel size {} must be below half the smaller image side ({})",
                self.kernel_size,
                w.min(h)
            )));
        }
        let vals = [self.lambda, self.lambda_min, self.dt, self.eps, self.fft_eps, self.final_lambda];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || self.dt == 0.0 {
            return Err(GdpError::Input("deconvolution parameters must be finite, nonnegative, dt > 0".into()));
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay <= 1.0) || !(0.0..1.0).contains(&self.kernel_cutoff) {
            return Err(GdpError::Input("lambda_decay must lie in (0, 1] and kernel_cutoff in [0, 1)".into()));
        }
        if self.levels == 0 || self.max_outer == 0 {
            return Err(GdpError::Input("levels and max_outer must be at least 1".into()));
        }
        Ok(())
    }
}

fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_mut(w) {
        row.process(r);
    }
    let mut buf = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
}

fn spectrum_of(v: &[f64], w: usize, h: usize) -> Vec<Complex<f64>> {
    let mut c: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2(&mut c, w, h, false);
    c
}

/// Least-squares kernel on the torus, cropped to the centered `size×size`
/// window. `fft_eps` is an absolute floor on the denominator.
pub fn estimate_kernel(gu: &GradientField, gi: &GradientField, size: usize, fft_eps: f64) -> Result<Image> {
    let (w, h) = (gu.width(), gu.height());
    if gi.width() != w || gi.height() != h {
        return Err(GdpError::Dimension(format!("gradient fields {w}x{h} and {}x{} differ", gi.width(), gi.height())));
    }
    if size % 2 == 0 || size > w || size > h {
        return Err(GdpError::Input(format!("kernel window {size} must be odd and fit {w}x{h}")));
    }
    if gu.gx.iter().chain(&gu.gy).all(|&v| v == 0.0) {
        return Err(GdpError::SingularEstimate("latent gradient field is identically zero".into()));
    }
    let (ux, uy) = (spectrum_of(&gu.gx, w, h), spectrum_of(&gu.gy, w, h));
    let (ix, iy) = (spectrum_of(&gi.gx, w, h), spectrum_of(&gi.gy, w, h));
    let den: Vec<f64> = ux.iter().zip(&uy).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect();
    let mut k: Vec<Complex<f64>> = (0..w * h)
        .map(|i| {
            let num = ux[i].conj() * ix[i] + uy[i].conj() * iy[i];
            let d = den[i].max(fft_eps);
            if d > 0.0 {
                num / d
            } else {
                Complex::default()
            }
        })
        .collect();
    fft2(&mut k, w, h, true);
    let n = (w * h) as f64;
    let r = (size / 2) as isize;
    let (wi, hi) = (w as isize, h as isize);
    Ok(Image::from_fn(size, size, |i, j| {
        let dx = (i as isize - r).rem_euclid(wi) as usize;
        let dy = (j as isize - r).rem_euclid(hi) as usize;
        k[dy * w + dx].re / n
    }))
}

/// Multiplies both components by a separable `sin²` ramp of width `ramp` at
/// every border, so the circular model holds away from the edges.
pub fn edge_taper(g: &GradientField, ramp: usize) -> GradientField {
    let (w, h) = (g.width(), g.height());
    let weight = |d: usize| {
        if d >= ramp {
            1.0
        } else {
            let s = (std::f64::consts::FRAC_PI_2 * (d as f64 + 0.5) / ramp as f64).sin();
            s * s
        }
    };
    let wx: Vec<f64> = (0..w).map(|x| weight(x.min(w - 1 - x))).collect();
    let wy: Vec<f64> = (0..h).map(|y| weight(y.min(h - 1 - y))).collect();
    let mut out = g.clone();
    for y in 0..h {
        for x in 0..w {
            let f = wx[x] * wy[y];
            out.gx[y * w + x] *= f;
            out.gy[y * w + x] *= f;
        }
    }
    out
}

/// Zeroes negative weights and rescales to unit sum.
pub fn project_weights(raw: &[f64]) -> Result<Vec<f64>> {
    let pos: Vec<f64> = raw.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let s: f64 = pos.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(GdpError::Numeric("kernel has no positive mass to project".into()));
    }
    Ok(pos.into_iter().map(|v| v / s).collect())
}

pub fn project_kernel(raw: &Image) -> Result<Kernel> {
    Kernel::new(raw.width(), raw.height(), project_weights(raw.data())?)
}

/// `(U⊗K)(x)` for each pixel `x` whose kernel support lies inside; zero elsewhere.
fn blur_interior(u: &[f64], w: usize, h: usize, k: &Kernel, out: &mut [f64]) {
    let (kw, kh, rx, ry) = (k.width(), k.height(), k.rx(), k.ry());
    let kwt = k.weights();
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in ry..h - ry {
        for x in rx..w - rx {
            let mut acc = 0.0;
            for j in 0..kh {
                let sy = y + ry - j;
                let urow = &u[sy * w..sy * w + w];
                let krow = &kwt[j * kw..j * kw + kw];
                for i in 0..kw {
                    acc += krow[i] * urow[x + rx - i];
                }
            }
            out[y * w + x] = acc;
        }
    }
}

/// Adjoint of [`blur_interior`]: spreads each interior value through the flipped kernel.
fn blur_interior_adjoint(r: &[f64], w: usize, h: usize, k: &Kernel, out: &mut [f64]) {
    let (kw, kh, rx, ry) = (k.width(), k.height(), k.rx(), k.ry());
    let kwt = k.weights();
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in ry..h - ry {
        for x in rx..w - rx {
            let v = r[y * w + x];
            if v == 0.0 {
                continue;
            }
            for j in 0..kh {
                let sy = y + ry - j;
                let krow = &kwt[j * kw..j * kw + kw];
                let orow = &mut out[sy * w..sy * w + w];
                for i in 0..kw {
                    orow[x + rx - i] += krow[i] * v;
                }
            }
        }
    }
}

/// Linear observation model `U ↦ A U` with its adjoint.
pub trait Observation: Sync {
    fn latent_size(&self) -> (usize, usize);
    fn observed_size(&self) -> (usize, usize);
    fn apply(&self, u: &[f64], out: &mut [f64]);
    fn adjoint(&self, r: &[f64], out: &mut [f64]);
    /// Diagonal of `AᵀA`.
    fn normal_diagonal(&self) -> Vec<f64>;
}

/// Blur restricted to interior pixels.
pub struct InteriorBlur<'a> {
    pub kernel: &'a Kernel,
    pub width: usize,
    pub height: usize,
}

impl Observation for InteriorBlur<'_> {
    fn latent_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn observed_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        blur_interior(u, self.width, self.height, self.kernel, out)
    }
    fn adjoint(&self, r: &[f64], out: &mut [f64]) {
        blur_interior_adjoint(r, self.width, self.height, self.kernel, out)
    }
    fn normal_diagonal(&self) -> Vec<f64> {
        let (w, h, k) = (self.width, self.height, self.kernel);
        let (kw, rx, ry) = (k.width(), k.rx(), k.ry());
        let mut out = vec![0.0; w * h];
        for y in ry..h - ry {
            for x in rx..w - rx {
                for (t, kv) in k.weights().iter().enumerate() {
                    let (i, j) = (t % kw, t / kw);
                    out[(y + ry - j) * w + x + rx - i] += kv * kv;
                }
            }
        }
        out
    }
}

/// Gaussian blur followed by `factor×factor` block averaging.
pub struct BlurDecimate<'a> {
    pub kernel: &'a Kernel,
    pub factor: usize,
    /// Observed (coarse) size.
    pub width: usize,
    pub height: usize,
}

fn blur_replicate(u: &[f64], w: usize, h: usize, k: &Kernel, flip: bool, out: &mut [f64]) {
    // Zero-flux borders: indices are clamped, so the adjoint accumulates.
    let (kw, kh, rx, ry) = (k.width() as isize, k.height() as isize, k.rx() as isize, k.ry() as isize);
    let kwt = k.weights();
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            let v = u[(y * w as isize + x) as usize];
            for j in 0..kh {
                for i in 0..kw {
                    let sx = (x + rx - i).clamp(0, w as isize - 1);
                    let sy = (y + ry - j).clamp(0, h as isize - 1);
                    let kv = kwt[(j * kw + i) as usize];
                    if flip {
                        out[(sy * w as isize + sx) as usize] += kv * v;
                    } else {
                        acc += kv * u[(sy * w as isize + sx) as usize];
                    }
                }
            }
            if !flip {
                out[(y * w as isize + x) as usize] = acc;
            }
        }
    }
}

impl Observation for BlurDecimate<'_> {
    fn latent_size(&self) -> (usize, usize) {
        (self.width * self.factor, self.height * self.factor)
    }
    fn observed_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (fw, fh) = self.latent_size();
        let mut b = vec![0.0; fw * fh];
        blur_replicate(u, fw, fh, self.kernel, false, &mut b);
        let f = self.factor;
        let n = (f * f) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let mut s = 0.0;
                for j in 0..f {
                    for i in 0..f {
                        s += b[(y * f + j) * fw + x * f + i];
                    }
                }
                out[y * self.width + x] = s / n;
            }
        }
    }
    fn adjoint(&self, r: &[f64], out: &mut [f64]) {
        let (fw, fh) = self.latent_size();
        let f = self.factor;
        let n = (f * f) as f64;
        let up: Vec<f64> = (0..fw * fh).map(|i| r[(i / fw / f) * self.width + (i % fw) / f] / n).collect();
        blur_replicate(&up, fw, fh, self.kernel, true, out);
    }
    fn normal_diagonal(&self) -> Vec<f64> {
        let (fw, fh) = self.latent_size();
        let k2: f64 = self.kernel.weights().iter().map(|v| v * v).sum();
        vec![k2 / (self.factor * self.factor) as f64; fw * fh]
    }
}

fn prior_energy(u: &Image, lambda: f64, t: f64, b: f64) -> f64 {
    let g = gradient(u).expect("image at least 2x2");
    let t2 = t * t;
    0.5 * lambda * g.gx.iter().zip(&g.gy).map(|(x, y)| {
        let v = x * x + y * y;
        t2 * v + (b + v).ln()
    }).sum::<f64>()
}

/// `½‖A U − I‖² + (λ/2) Σ [T² v + log(b + v)]`.
pub fn deconv_energy(u: &Image, observed: &Image, op: &dyn Observation, lambda: f64, t: f64, b: f64) -> f64 {
    let mut r = vec![0.0; observed.len()];
    op.apply(u.data(), &mut r);
    let mut interior = vec![0.0; observed.len()];
    // Pixels outside the observation support produce zero on both sides.
    op.apply(&vec![1.0; u.len()], &mut interior);
    let data: f64 = r
        .iter()
        .zip(observed.data())
        .zip(&interior)
        .map(|((a, i), m)| if *m != 0.0 { (a - i) * (a - i) } else { 0.0 })
        .sum();
    0.5 * data + prior_energy(u, lambda, t, b)
}

/// One majorize-minimize step:
/// `(1 + dt AᵀA − dt λ div ψ∇) U' = U + dt Aᵀ I`.
pub fn image_step(u: &Image, observed: &Image, op: &dyn Observation, lambda: f64, t: f64, b: f64, dt: f64) -> Result<Image> {
    let (w, h) = (u.width(), u.height());
    let g = gradient(u)?;
    let t2 = t * t;
    let psi: Vec<f64> = g.gx.iter().zip(&g.gy).map(|(x, y)| t2 + 1.0 / (b + x * x + y * y)).collect();
    let n_obs = observed.len();
    let mut support = vec![0.0; n_obs];
    op.apply(&vec![1.0; w * h], &mut support);
    let masked_obs: Vec<f64> =
        observed.data().iter().zip(&support).map(|(v, m)| if *m != 0.0 { *v } else { 0.0 }).collect();
    let mut ati = vec![0.0; w * h];
    op.adjoint(&masked_obs, &mut ati);
    let rhs: Vec<f64> = u.data().iter().zip(&ati).map(|(a, b)| a + dt * b).collect();
    let ata_diag = op.normal_diagonal();
    let mut diag = screened_weighted_diagonal(&psi, w, h, 1.0, dt * lambda);
    for (d, a) in diag.iter_mut().zip(&ata_diag) {
        *d += dt * a;
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        screened_weighted_laplacian(x, &psi, w, h, 1.0, dt * lambda, out);
        let mut ax = vec![0.0; n_obs];
        op.apply(x, &mut ax);
        let mut atax = vec![0.0; w * h];
        op.adjoint(&ax, &mut atax);
        for (o, v) in out.iter_mut().zip(&atax) {
            *o += dt * v;
        }
    };
    let mut x = u.data().to_vec();
    cg_slices(&apply, Some(&diag), &rhs, &mut x, 1e-8, 1000)?;
    Image::new(w, h, x)
}

fn grad_rms(a: &Image, b: &Image) -> f64 {
    let g = gradient(&a.zip_map(b, |x, y| x - y)).expect("same size");
    (g.gx.iter().chain(&g.gy).map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

fn odd_at_least(v: f64, min: usize) -> usize {
    let mut n = v.round().max(min as f64) as usize;
    if n % 2 == 0 {
        n += 1;
    }
    n
}

fn resize_kernel(k: &Kernel, size: usize) -> Result<Kernel> {
    if k.width() == size {
        return Ok(k.clone());
    }
    let up = resample_to(&k.to_image(), size, size, ResampleMethod::Bilinear)?;
    project_kernel(&up)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub width: usize,
    pub height: usize,
    pub kernel_size: usize,
    pub lambda: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub final_energy: f64,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeconvReport {
    /// Coarsest first.
    pub levels: Vec<LevelReport>,
    /// How the two gradient components enter the kernel estimate.
    pub component_contraction: String,
}

/// One image step with energy acceptance, halving `dt` on rejection.
fn descend(u: &Image, observed: &Image, op: &dyn Observation, lambda: f64, t: f64, b: f64, dt: f64) -> Result<(Image, f64)> {
    let e = deconv_energy(u, observed, op, lambda, t, b);
    let mut dt = dt;
    for _ in 0..=10 {
        let next = image_step(u, observed, op, lambda, t, b, dt)?;
        let en = deconv_energy(&next, observed, op, lambda, t, b);
        if en.is_finite() && en <= e {
            return Ok((next, en));
        }
        dt *= 0.5;
    }
    Err(GdpError::Diverged { iterations: 11, reason: "image step kept raising the energy".into() })
}

fn cut_and_project(raw: &Image, cutoff: f64) -> Result<Kernel> {
    let peak = raw.data().iter().cloned().fold(0.0, f64::max);
    project_kernel(&raw.map(|v| if v < cutoff * peak { 0.0 } else { v }))
}

/// Non-blind deconvolution from `init` with a known kernel; returns the
/// image and the energy after every accepted step.
pub fn deconvolve_from(
    init: &Image,
    observed: &Image,
    kernel: &Kernel,
    prior: &PriorBundle,
    lambda: f64,
    dt: f64,
    eps: f64,
    max_iter: usize,
) -> Result<(Image, Vec<f64>)> {
    init.check_same_size(observed)?;
    let op = InteriorBlur { kernel, width: observed.width(), height: observed.height() };
    let mut u = init.clone();
    let mut energies = vec![deconv_energy(&u, observed, &op, lambda, prior.t_pr, prior.b_pr)];
    for _ in 0..max_iter {
        let (next, e) = descend(&u, observed, &op, lambda, prior.t_pr, prior.b_pr, dt)?;
        let d = grad_rms(&next, &u);
        u = next;
        energies.push(e);
        if d <= eps {
            break;
        }
    }
    Ok((u, energies))
}

pub fn deconvolve(img: &Image, kernel: &Kernel, prior: &PriorBundle, cfg: &DeconvConfig) -> Result<(Image, Vec<f64>)> {
    deconvolve_from(img, img, kernel, prior, cfg.final_lambda, cfg.dt, cfg.eps, cfg.final_iters)
}

pub fn blind_deconvolve(img: &Image, prior: &PriorBundle, cfg: &DeconvConfig) -> Result<(Image, Kernel, DeconvReport)> {
    let (w, h) = (img.width(), img.height());
    cfg.validate(w, h)?;
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(GdpError::Input("image contains non-finite values".into()));
    }
    let (t, b) = (prior.t_pr, prior.b_pr);
    let mut u: Option<Image> = None;
    let mut k: Option<Kernel> = None;
    let mut reports = Vec::new();
    // Continuation runs across levels rather than restarting at each.
    let mut lambda = cfg.lambda;
    for level in (0..cfg.levels).rev() {
        let s = 0.5f64.powi(level as i32);
        let (lw, lh) = (((w as f64) * s).round() as usize, ((h as f64) * s).round() as usize);
        let ksize = odd_at_least(cfg.kernel_size as f64 * s, 3);
        if level > 0 && (2 * ksize >= lw.min(lh) || lw.min(lh) < MIN_LEVEL_SIDE) {
            continue;
        }
        let observed = resample_to(img, lw, lh, ResampleMethod::Bilinear)?;
        let mut cur = match &u {
            Some(prev) => resample_to(prev, lw, lh, ResampleMethod::Bilinear)?,
            None => observed.clone(),
        };
        let mut kern = match &k {
            Some(prev) => {
                let kk = resize_kernel(prev, ksize)?;
                let op = InteriorBlur { kernel: &kk, width: lw, height: lh };
                cur = descend(&cur, &observed, &op, lambda, t, b, cfg.dt)?.0;
                kk
            }
            None => Kernel::identity(ksize),
        };
        let ramp = (2 * ksize).min(lw.min(lh) / 4).max(1);
        let gi = edge_taper(&gradient(&observed)?, ramp);
        let mut converged = false;
        let mut iters = 0;
        let mut energy = f64::NAN;
        for _ in 0..cfg.max_outer {
            iters += 1;
            let gu = edge_taper(&gradient(&cur)?, ramp);
            kern = cut_and_project(&estimate_kernel_rel(&gu, &gi, ksize, cfg.fft_eps)?, cfg.kernel_cutoff)?;
            let op = InteriorBlur { kernel: &kern, width: lw, height: lh };
            let (next, e) = descend(&cur, &observed, &op, lambda, t, b, cfg.dt)?;
            energy = e;
            let d = grad_rms(&next, &cur);
            cur = next;
            let at_floor = lambda <= cfg.lambda_min;
            lambda = (lambda * cfg.lambda_decay).max(cfg.lambda_min);
            if at_floor && d <= cfg.eps {
                converged = true;
                break;
            }
        }
        log::debug!("deconv level {lw}x{lh}: kernel {ksize}, {iters} outer iterations");
        reports.push(LevelReport {
            width: lw,
            height: lh,
            kernel_size: ksize,
            lambda,
            outer_iterations: iters,
            converged,
            final_energy: energy,
            kernel: kern.clone(),
        });
        u = Some(cur);
        k = Some(kern);
    }
    let (u, k) = match (u, k) {
        (Some(u), Some(k)) => (u, k),
        _ => return Err(GdpError::Input("no pyramid level is large enough for the kernel".into())),
    };
    let (u, _) = deconvolve_from(&u, img, &k, prior, cfg.final_lambda, cfg.dt, cfg.eps, cfg.final_iters)?;
    Ok((u, k, DeconvReport { levels: reports, component_contraction: "sum over x and y components".into() }))
}

/// [`estimate_kernel`] with the floor given relative to the largest denominator.
pub fn estimate_kernel_rel(gu: &GradientField, gi: &GradientField, size: usize, rel_eps: f64) -> Result<Image> {
    let (w, h) = (gu.width(), gu.height());
    let (ux, uy) = (spectrum_of(&gu.gx, w, h), spectrum_of(&gu.gy, w, h));
    let max = ux.iter().zip(&uy).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).fold(0.0, f64::max);
    estimate_kernel(gu, gi, size, rel_eps * max)
}

/// Normalized cross-correlation of two equally sized kernels.
pub fn kernel_ncc(a: &Kernel, b: &Kernel) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(GdpError::Dimension("kernels differ in size".into()));
    }
    crate::spectrum::pearson(a.weights(), b.weights())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoomConfig {
    pub lambda: f64,
    pub dt: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        ZoomConfig { lambda: 1e-4, dt: 10.0, eps: 1e-5, max_iter: 30 }
    }
}

/// Upsamples by an integer factor, inverting a Gaussian blur plus block averaging.
pub fn zoom(img: &Image, factor: usize, sigma: f64, prior: &PriorBundle, cfg: &ZoomConfig) -> Result<Image> {
    if factor == 0 {
        return Err(GdpError::Input("zoom factor must be at least 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(GdpError::Input(format!("blur sigma {sigma} must be finite and nonnegative")));
    }
    let (w, h) = (img.width(), img.height());
    let (fw, fh) = (w * factor, h * factor);
    let kernel = zoom_kernel(sigma);
    if kernel.width() > fw || kernel.height() > fh {
        return Err(GdpError::Dimension("blur kernel larger than the zoomed image".into()));
    }
    let op = BlurDecimate { kernel: &kernel, factor, width: w, height: h };
    let mut u = resample_to(img, fw, fh, ResampleMethod::Bilinear)?;
    for _ in 0..cfg.max_iter {
        let (next, _) = descend(&u, img, &op, cfg.lambda, prior.t_pr, prior.b_pr, cfg.dt)?;
        let d = grad_rms(&next, &u);
        u = next;
        if d <= cfg.eps {
            break;
        }
    }
    Ok(u)
}

/// Gaussian of standard deviation `sigma` with radius `⌈3σ⌉`; impulse for `σ = 0`.
pub fn zoom_kernel(sigma: f64) -> Kernel {
    if sigma <= 0.0 {
        Kernel::identity(1)
    } else {
        gaussian_kernel(sigma, (3.0 * sigma).ceil().max(1.0) as usize)
    }
}

/// The zoom forward model: blur then block-average by `factor`.
pub fn degrade(img: &Image, factor: usize, sigma: f64) -> Result<Image> {
    if factor == 0 || img.width() % factor != 0 || img.height() % factor != 0 {
        return Err(GdpError::Input(format!("factor {factor} must divide {}x{}", img.width(), img.height())));
    }
    let kernel = zoom_kernel(sigma);
    let op = BlurDecimate { kernel: &kernel, factor, width: img.width() / factor, height: img.height() / factor };
    let mut out = vec![0.0; op.width * op.height];
    op.apply(img.data(), &mut out);
    Image::new(op.width, op.height, out)
}

/// Catmull-Rom bicubic upsampling, the zoom baseline.
pub fn bicubic_upsample(img: &Image, factor: usize) -> Result<Image> {
    use image::{imageops, ImageBuffer, Luma};
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&v| v as f32).collect(),
    )
    .ok_or_else(|| GdpError::Dimension("image buffer size mismatch".into()))?;
    let up = imageops::resize(
        &buf,
        (img.width() * factor) as u32,
        (img.height() * factor) as u32,
        imageops::FilterType::CatmullRom,
    );
    Image::new(img.width() * factor, img.height() * factor, up.into_raw().into_iter().map(f64::from).collect())
}
