//! Prior-regularized restoration: the diffusion coefficient and its sign
//! structure, the GDP denoising energy and iteration, a proximal D.C. loop,
//! and a total-variation baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{central_grad_sq, divergence, gradient, laplacian, resample_to, GradientField, Image, ResampleMethod};

/// `λ = LAMBDA_SIGMA2_GAIN · σ̂²` when the weight is chosen automatically.
pub const LAMBDA_SIGMA2_GAIN: f64 = 1.0;

/// `W(v) = T² + (b − v)/(b + v)²`.
#[inline]
pub fn diffusion_coefficient(v: f64, t_pr: f64, b_pr: f64) -> f64 {
    let s = b_pr + v;
    t_pr * t_pr + (b_pr - v) / (s * s)
}

/// Roots of `W(v) = 0`, or `None` when `T²b ≥ 1/8` (then `W ≥ 0`).
pub fn lemma_roots(t_pr: f64, b_pr: f64) -> Option<(f64, f64)> {
    let t2 = t_pr * t_pr;
    let disc = 1.0 - 8.0 * t2 * b_pr;
    if disc < 0.0 {
        return None;
    }
    let big = 1.0 - 2.0 * t2 * b_pr + disc.sqrt();
    let v_u = big / (2.0 * t2);
    // Product of the roots is (T²b² + b)/T²; avoids cancellation in v_L.
    let v_l = 2.0 * (t2 * b_pr * b_pr + b_pr) / big;
    Some((v_l, v_u))
}

/// How `‖∇U‖²` is discretized inside `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradScheme {
    #[default]
    Central,
    Forward,
}

/// Right-hand side of the diffusion update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionForm {
    /// `λ·div(ψ∇U)` with `ψ = T² + 1/(b + ‖∇U‖²)`: the negative gradient of
    /// the prior term. Across an edge its effective coefficient is `W`,
    /// along it `ψ > 0`.
    #[default]
    Divergence,
    /// `λ·W·ΔU`, applying `W` isotropically.
    Isotropic,
}

/// How the diffusion term enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    /// Diffusion term at `U_i`; `dt` is capped for stability.
    Explicit,
    /// Diffusion term at `U_{i+1}` with `ψ` frozen at `U_i`, solved by
    /// conjugate gradients. Only for the divergence form. Because the prior
    /// penalty is concave in `‖∇U‖²` this step never increases the energy.
    #[default]
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub lambda: f64,
    pub dt: f64,
    pub t_pr: f64,
    pub b_pr: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub multiscale_levels: usize,
    pub clamp_w: bool,
    pub grad_scheme: GradScheme,
    pub form: DiffusionForm,
    pub stepping: Stepping,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            lambda: LAMBDA_SIGMA2_GAIN * 0.01,
            dt: 0.2,
            t_pr: crate::prior::PUBLISHED_T_PR,
            b_pr: crate::prior::PUBLISHED_B_PR,
            eps: 1e-4,
            max_iter: 500,
            multiscale_levels: 3,
            clamp_w: true,
            grad_scheme: GradScheme::Central,
            form: DiffusionForm::Divergence,
            stepping: Stepping::SemiImplicit,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.dt > 0.0
            && self.dt <= 0.25
            && self.t_pr > 0.0
            && self.b_pr > 0.0
            && self.eps > 0.0
            && self.max_iter > 0
            && self.multiscale_levels >= 1;
        if ok {
            Ok(())
        } else {
            Err(GdpError::Input(format!("invalid diffusion config: {self:?}")))
        }
    }

    /// Upper bound of `W` (its value at `v = 0`).
    pub fn w_max(&self) -> f64 {
        self.t_pr * self.t_pr + 1.0 / self.b_pr
    }

    fn semi_implicit(&self) -> bool {
        self.stepping == Stepping::SemiImplicit && self.form == DiffusionForm::Divergence
    }

    /// Step actually used. Explicit steps are reduced so that `dt·λ·W` stays
    /// within the 2D stability bound.
    pub fn effective_dt(&self) -> f64 {
        if self.semi_implicit() {
            return self.dt;
        }
        let lw = self.lambda * self.w_max();
        if lw > 0.0 {
            self.dt.min(0.25 / lw)
        } else {
            self.dt
        }
    }
}

/// Chooses `λ` from a noise level estimate.
pub fn auto_lambda(sigma: f64) -> f64 {
    LAMBDA_SIGMA2_GAIN * sigma * sigma
}

/// `E(U) = ½‖U − I‖² + (λ/2) Σ [T²‖∇U‖² + log(b + ‖∇U‖²)]` with forward
/// differences (masked components count as zero).
pub fn energy(u: &Image, noisy: &Image, lambda: f64, t_pr: f64, b_pr: f64) -> Result<f64> {
    u.check_same_size(noisy)?;
    let g = gradient(u)?;
    let t2 = t_pr * t_pr;
    let data: f64 = u.data().iter().zip(noisy.data()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    let prior: f64 = g
        .gx
        .iter()
        .zip(&g.gy)
        .map(|(x, y)| {
            let v = x * x + y * y;
            t2 * v + (b_pr + v).ln()
        })
        .sum();
    Ok(data + 0.5 * lambda * prior)
}

/// `∇E = (U − I) − λ div((T² + 1/(b + ‖∇U‖²)) ∇U)`.
pub fn energy_gradient(u: &Image, noisy: &Image, lambda: f64, t_pr: f64, b_pr: f64) -> Result<Image> {
    u.check_same_size(noisy)?;
    let d = prior_flow(u, t_pr, b_pr);
    Ok(Image::from_fn(u.width(), u.height(), |x, y| (u.get(x, y) - noisy.get(x, y)) - lambda * d.get(x, y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub level: usize,
    pub iter: usize,
    pub energy: f64,
    pub max_update: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub iterations: usize,
    pub converged: bool,
    pub rejected_steps: usize,
    pub final_energy: f64,
    pub dt_effective: f64,
    pub levels: usize,
    pub log: Vec<IterationLog>,
}

impl DenoiseReport {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("level,iter,energy,max_update,dt\n");
        for l in &self.log {
            s.push_str(&format!("{},{},{:.12e},{:.6e},{:.6e}\n", l.level, l.iter, l.energy, l.max_update, l.dt));
        }
        s
    }
}

const MAX_REJECTIONS: usize = 10;

fn w_field(u: &Image, cfg: &DiffusionConfig) -> Vec<f64> {
    let v = match cfg.grad_scheme {
        GradScheme::Central => central_grad_sq(u),
        GradScheme::Forward => {
            let g = gradient(u).expect("size checked");
            g.gx.iter().zip(&g.gy).map(|(x, y)| x * x + y * y).collect()
        }
    };
    let (lo, hi) = (-1.0 / cfg.b_pr, cfg.w_max());
    v.into_par_iter()
        .map(|v| {
            let w = diffusion_coefficient(v, cfg.t_pr, cfg.b_pr);
            if cfg.clamp_w {
                w.clamp(lo, hi)
            } else {
                w
            }
        })
        .collect()
}

/// `ψ = T² + 1/(b + ‖∇U‖²)` per pixel, forward differences.
fn psi_field(u: &Image, t_pr: f64, b_pr: f64) -> Vec<f64> {
    let g = gradient(u).expect("size checked");
    let t2 = t_pr * t_pr;
    g.gx.iter().zip(&g.gy).map(|(x, y)| t2 + 1.0 / (b_pr + x * x + y * y)).collect()
}

/// `div(ψ∇U)` for a given coefficient field.
fn weighted_div(u: &Image, psi: &[f64]) -> Image {
    let mut g = gradient(u).expect("size checked");
    for ((x, y), p) in g.gx.iter_mut().zip(g.gy.iter_mut()).zip(psi) {
        *x *= p;
        *y *= p;
    }
    divergence(&g)
}

/// `div(ψ∇U)` with forward differences.
fn prior_flow(u: &Image, t_pr: f64, b_pr: f64) -> Image {
    weighted_div(u, &psi_field(u, t_pr, b_pr))
}

/// Semi-implicit update: `(1 + dt)U' − dt·λ·div(ψ(U)∇U') = U + dt·I`.
fn step_semi_implicit(u: &Image, noisy: &Image, cfg: &DiffusionConfig, dt: f64) -> Result<Image> {
    let psi = psi_field(u, cfg.t_pr, cfg.b_pr);
    let (w, h) = (u.width(), u.height());
    let apply = |x: &[f64], out: &mut [f64]| {
        screened_weighted_laplacian(x, &psi, w, h, 1.0 + dt, dt * cfg.lambda, out)
    };
    let rhs: Vec<f64> = u.data().iter().zip(noisy.data()).map(|(a, b)| a + dt * b).collect();
    let mut x = u.data().to_vec();
    let diag = screened_weighted_diagonal(&psi, w, h, 1.0 + dt, dt * cfg.lambda);
    cg_slices(&apply, Some(&diag), &rhs, &mut x, 1e-7, 2000)?;
    Image::new(w, h, x)
}

/// One update `U' = (U + dt·I + dt·λ·D(U)) / (1 + dt)` where `D` is the
/// configured diffusion term.
fn step(u: &Image, noisy: &Image, cfg: &DiffusionConfig, dt: f64) -> Image {
    let (w, lap) = match cfg.form {
        DiffusionForm::Isotropic => (w_field(u, cfg), laplacian(u)),
        DiffusionForm::Divergence => (vec![1.0; u.len()], prior_flow(u, cfg.t_pr, cfg.b_pr)),
    };
    let width = u.width();
    let mut out = vec![0.0; u.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * width + x;
            *o = (u.data()[i] + dt * noisy.data()[i] + dt * cfg.lambda * w[i] * lap.data()[i]) / (1.0 + dt);
        }
    });
    Image::new(u.width(), u.height(), out).expect("size preserved")
}

fn run_level(
    init: Image,
    noisy: &Image,
    cfg: &DiffusionConfig,
    level: usize,
    report: &mut DenoiseReport,
) -> Result<Image> {
    let mut u = init;
    let mut e = energy(&u, noisy, cfg.lambda, cfg.t_pr, cfg.b_pr)?;
    let mut dt = cfg.effective_dt();
    let mut rejections = 0;
    report.log.push(IterationLog { level, iter: 0, energy: e, max_update: 0.0, dt });
    for iter in 1..=cfg.max_iter {
        let cand = if cfg.semi_implicit() { step_semi_implicit(&u, noisy, cfg, dt)? } else { step(&u, noisy, cfg, dt) };
        let upd = cand.max_abs_diff(&u);
        if !upd.is_finite() {
            return Err(GdpError::Diverged { iterations: report.iterations, reason: "non-finite update".into() });
        }
        let e_new = energy(&cand, noisy, cfg.lambda, cfg.t_pr, cfg.b_pr)?;
        if upd <= cfg.eps {
            if e_new <= e {
                u = cand;
                e = e_new;
            }
            report.converged = true;
            report.iterations += 1;
            report.log.push(IterationLog { level, iter, energy: e, max_update: upd, dt });
            break;
        }
        if e_new > e {
            rejections += 1;
            report.rejected_steps += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(GdpError::Diverged {
                    iterations: report.iterations,
                    reason: format!("energy increased on {MAX_REJECTIONS} consecutive steps (dt down to {dt:.3e})"),
                });
            }
            dt *= 0.5;
            continue;
        }
        rejections = 0;
        u = cand;
        e = e_new;
        report.iterations += 1;
        report.log.push(IterationLog { level, iter, energy: e, max_update: upd, dt });
    }
    report.final_energy = e;
    Ok(u)
}

/// Image pyramid, finest first; stops before a side drops below 16.
fn pyramid(img: &Image, levels: usize) -> Result<Vec<Image>> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        let (w, h) = (last.width() / 2, last.height() / 2);
        if w < 16 || h < 16 {
            break;
        }
        out.push(resample_to(last, w, h, ResampleMethod::Bilinear)?);
    }
    Ok(out)
}

/// GDP denoising by the explicit fixed-point iteration, coarse to fine.
pub fn denoise(img: &Image, cfg: &DiffusionConfig) -> Result<(Image, DenoiseReport)> {
    cfg.validate()?;
    let mut report = DenoiseReport {
        iterations: 0,
        converged: false,
        rejected_steps: 0,
        final_energy: 0.0,
        dt_effective: cfg.effective_dt(),
        levels: 0,
        log: Vec::new(),
    };
    if cfg.lambda == 0.0 {
        report.converged = true;
        report.final_energy = energy(img, img, 0.0, cfg.t_pr, cfg.b_pr)?;
        report.levels = 1;
        return Ok((img.clone(), report));
    }
    let pyr = pyramid(img, cfg.multiscale_levels)?;
    report.levels = pyr.len();
    let mut u = pyr.last().expect("non-empty").clone();
    for (level, target) in pyr.iter().enumerate().rev() {
        if !u.same_size(target) {
            u = resample_to(&u, target.width(), target.height(), ResampleMethod::Bilinear)?;
        }
        report.converged = false;
        u = run_level(u, target, cfg, level, &mut report)?;
    }
    Ok((u, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcConfig {
    pub dt: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for DcConfig {
    fn default() -> Self {
        DcConfig { dt: 1.0, eps: 1e-5, max_iter: 300, cg_tol: 1e-10, cg_max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcReport {
    pub iterations: usize,
    pub converged: bool,
    pub energies: Vec<f64>,
    pub cg_iterations: usize,
}

type Op<'a> = &'a (dyn Fn(&Image) -> Image + Sync);

/// Proximal D.C. iteration `U' = (Id + dt∇E₁)⁻¹(U + dt∇E₂(U))` with the
/// quadratic Bregman function. `grad_e1` must be affine; the inner system
/// is solved by conjugate gradients. `energy`, when given, is recorded.
pub fn dc_minimize(
    grad_e1: Op<'_>,
    grad_e2: Op<'_>,
    energy: Option<&dyn Fn(&Image) -> f64>,
    init: &Image,
    cfg: &DcConfig,
) -> Result<(Image, DcReport)> {
    if !(cfg.dt > 0.0) || !(cfg.eps > 0.0) {
        return Err(GdpError::Input("dc_minimize needs dt > 0 and eps > 0".into()));
    }
    let zero = Image::filled(init.width(), init.height(), 0.0);
    let g0 = grad_e1(&zero);
    // M(U) = U + dt(∇E₁(U) − ∇E₁(0)) is the linear part of the inner system.
    let apply = |u: &Image| -> Image {
        let g = grad_e1(u);
        Image::from_fn(u.width(), u.height(), |x, y| u.get(x, y) + cfg.dt * (g.get(x, y) - g0.get(x, y)))
    };
    let mut report = DcReport { iterations: 0, converged: false, energies: Vec::new(), cg_iterations: 0 };
    let mut u = init.clone();
    if let Some(f) = energy {
        report.energies.push(f(&u));
    }
    for _ in 0..cfg.max_iter {
        let g2 = grad_e2(&u);
        let rhs = Image::from_fn(u.width(), u.height(), |x, y| {
            u.get(x, y) + cfg.dt * g2.get(x, y) - cfg.dt * g0.get(x, y)
        });
        let (next, its) = conjugate_gradient(&apply, &rhs, &u, cfg.cg_tol, cfg.cg_max_iter)?;
        report.cg_iterations += its;
        let upd = next.max_abs_diff(&u);
        u = next;
        report.iterations += 1;
        if let Some(f) = energy {
            report.energies.push(f(&u));
        }
        if upd <= cfg.eps {
            report.converged = true;
            break;
        }
    }
    Ok((u, report))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn conjugate_gradient(
    apply: &dyn Fn(&Image) -> Image,
    b: &Image,
    x0: &Image,
    tol: f64,
    max_iter: usize,
) -> Result<(Image, usize)> {
    let (w, h) = (b.width(), b.height());
    let mut x = x0.data().to_vec();
    let op = |v: &[f64], out: &mut [f64]| {
        let r = apply(&Image::new(w, h, v.to_vec()).expect("size preserved"));
        out.copy_from_slice(r.data());
    };
    let its = cg_slices(&op, None, b.data(), &mut x, tol, max_iter)?;
    Ok((Image::new(w, h, x)?, its))
}

/// Conjugate gradients on flat buffers, optionally with a diagonal (Jacobi)
/// preconditioner; `x` holds the start and the result.
pub fn cg_slices(
    apply: &dyn Fn(&[f64], &mut [f64]),
    diag: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        match diag {
            Some(d) => z.extend(r.iter().zip(d).map(|(r, d)| r / d)),
            None => z.extend_from_slice(r),
        }
    };
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rr = dot(&r, &r);
    let bn = dot(b, b).sqrt().max(1e-300);
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bn {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(GdpError::InnerSolve { residual: rr.sqrt() / bn });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rr = dot(&r, &r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pv, zv) in p.iter_mut().zip(&z) {
            *pv = zv + beta * *pv;
        }
    }
    if rr.sqrt() <= tol * bn {
        Ok(max_iter)
    } else {
        Err(GdpError::InnerSolve { residual: rr.sqrt() / bn })
    }
}

/// Diagonal of the operator in [`screened_weighted_laplacian`].
pub(crate) fn screened_weighted_diagonal(psi: &[f64], w: usize, h: usize, a: f64, c: f64) -> Vec<f64> {
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut d = 0.0;
            if x + 1 < w {
                d += psi[i];
            }
            if x > 0 {
                d += psi[i - 1];
            }
            if y + 1 < h {
                d += psi[i];
            }
            if y > 0 {
                d += psi[i - w];
            }
            a + c * d
        })
        .collect()
}

/// `out = a·x − c·div(ψ∇x)` with forward differences and masked borders.
pub(crate) fn screened_weighted_laplacian(x: &[f64], psi: &[f64], w: usize, h: usize, a: f64, c: f64, out: &mut [f64]) {
    let row = |y: usize, o: &mut [f64]| {
        let base = y * w;
        let xr = &x[base..base + w];
        let pr = &psi[base..base + w];
        for k in 0..w {
            let xi = xr[k];
            let mut d = 0.0;
            if k + 1 < w {
                d += pr[k] * (xr[k + 1] - xi);
            }
            if k > 0 {
                d -= pr[k - 1] * (xi - xr[k - 1]);
            }
            if y + 1 < h {
                d += pr[k] * (x[base + w + k] - xi);
            }
            if y > 0 {
                d -= psi[base - w + k] * (xi - x[base - w + k]);
            }
            o[k] = a * xi - c * d;
        }
    };
    if w * h >= 1 << 16 {
        out.par_chunks_mut(w).enumerate().for_each(|(y, o)| row(y, o));
    } else {
        out.chunks_mut(w).enumerate().for_each(|(y, o)| row(y, o));
    }
}

/// The GDP denoising energy split as `E₁ − E₂` with
/// `E₁ = ½‖U − I‖² + (λ/2)(T² + 1/b)‖∇U‖²` and
/// `E₂ = (λ/2) Σ [‖∇U‖²/b − log(b + ‖∇U‖²)]`. The Hessian of
/// `log(b + |g|²)` is bounded by `2/b`, so `E₂` is convex.
pub fn gdp_dc_denoise(img: &Image, lambda: f64, t_pr: f64, b_pr: f64, cfg: &DcConfig) -> Result<(Image, DcReport)> {
    let k = t_pr * t_pr + 1.0 / b_pr;
    let grad_e1 = |u: &Image| -> Image {
        let lap = laplacian(u);
        Image::from_fn(u.width(), u.height(), |x, y| u.get(x, y) - img.get(x, y) - lambda * k * lap.get(x, y))
    };
    let grad_e2 = |u: &Image| -> Image {
        let mut g: GradientField = gradient(u).expect("size checked");
        for (x, y) in g.gx.iter_mut().zip(g.gy.iter_mut()) {
            let s = 1.0 / b_pr - 1.0 / (b_pr + *x * *x + *y * *y);
            *x *= s;
            *y *= s;
        }
        divergence(&g).map(|v| -lambda * v)
    };
    let e = |u: &Image| energy(u, img, lambda, t_pr, b_pr).expect("size checked");
    dc_minimize(&grad_e1, &grad_e2, Some(&e), img, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub eps: f64,
}

/// `λ_TV = TV_SIGMA_GAIN · σ̂` when the weight is chosen automatically.
pub const TV_SIGMA_GAIN: f64 = 1.4;

impl TvConfig {
    pub fn for_sigma(sigma: f64) -> Self {
        TvConfig { lambda: TV_SIGMA_GAIN * sigma, max_iter: 300, eps: 1e-5 }
    }
}

/// ROF total-variation denoising, `min ½‖U − I‖² + λ TV(U)`, by projected
/// gradient iterations on the dual field.
pub fn tv_denoise(img: &Image, cfg: &TvConfig) -> Result<Image> {
    if !(cfg.lambda >= 0.0) {
        return Err(GdpError::Input("TV weight must be nonnegative".into()));
    }
    if cfg.lambda == 0.0 {
        return Ok(img.clone());
    }
    let tau = 0.125;
    let (w, h) = (img.width(), img.height());
    let mut p = GradientField::zeros(w, h);
    let mut u = img.clone();
    for _ in 0..cfg.max_iter {
        let d = divergence(&p);
        let z = Image::from_fn(w, h, |x, y| d.get(x, y) - img.get(x, y) / cfg.lambda);
        let g = gradient(&z)?;
        for i in 0..w * h {
            let n = 1.0 + tau * (g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i]).sqrt();
            p.gx[i] = (p.gx[i] + tau * g.gx[i]) / n;
            p.gy[i] = (p.gy[i] + tau * g.gy[i]) / n;
        }
        let d = divergence(&p);
        let next = Image::from_fn(w, h, |x, y| img.get(x, y) - cfg.lambda * d.get(x, y));
        let upd = next.max_abs_diff(&u);
        u = next;
        if upd <= cfg.eps {
            break;
        }
    }
    Ok(u)
}
