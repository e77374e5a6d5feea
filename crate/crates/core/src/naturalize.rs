//! Gradient-field remapping and least-squares reconstruction.

use rayon::prelude::*;
use rustdct::DctPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{divergence, gradient, GradientField, Image};
use crate::prior::{naturalness_factor, PriorBundle};
use crate::spectrum::{accumulate, accumulate_field, distance, Axis, Marginal1D, Metric, BIN_MAX};

/// Spectral-domain operations on images under Neumann borders. The discrete
/// Laplacian `divergence(gradient(·))` is diagonal in the DCT-II basis.
pub struct NeumannDct {
    width: usize,
    height: usize,
    /// Laplacian eigenvalue per coefficient, all `≤ 0`.
    eig: Vec<f64>,
}

impl NeumannDct {
    pub fn new(width: usize, height: usize) -> Self {
        let ex: Vec<f64> =
            (0..width).map(|k| 2.0 * (std::f64::consts::PI * k as f64 / width as f64).cos() - 2.0).collect();
        let ey: Vec<f64> =
            (0..height).map(|l| 2.0 * (std::f64::consts::PI * l as f64 / height as f64).cos() - 2.0).collect();
        let eig = (0..width * height).map(|i| ex[i % width] + ey[i / width]).collect();
        NeumannDct { width, height, eig }
    }

    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// Forward 2D DCT-II (unnormalized).
    pub fn forward(&self, img: &Image) -> Vec<f64> {
        let mut buf = img.data().to_vec();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse of [`forward`](Self::forward).
    pub fn inverse(&self, coeffs: Vec<f64>) -> Image {
        let mut buf = coeffs;
        self.transform(&mut buf, true);
        let s = 4.0 / (self.width * self.height) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        Image::new(self.width, self.height, buf).expect("size preserved")
    }

    fn transform(&self, buf: &mut [f64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let mut planner = DctPlanner::new();
        let row = if inverse { planner.plan_dct3(w) } else { planner.plan_dct2(w) };
        buf.par_chunks_mut(w).for_each(|r| {
            if inverse {
                row.process_dct3(r)
            } else {
                row.process_dct2(r)
            }
        });
        let col = if inverse { planner.plan_dct3(h) } else { planner.plan_dct2(h) };
        let mut t = transpose(buf, w, h);
        t.par_chunks_mut(h).for_each(|c| {
            if inverse {
                col.process_dct3(c)
            } else {
                col.process_dct2(c)
            }
        });
        buf.copy_from_slice(&transpose(&t, h, w));
    }

    /// Solves `(a − b·Δ) x = rhs`. When `a = 0` the constant mode is set to
    /// zero, which yields the zero-mean solution of the Poisson equation.
    pub fn solve(&self, rhs: &Image, a: f64, b: f64) -> Image {
        let mut c = self.forward(rhs);
        for (v, e) in c.iter_mut().zip(&self.eig) {
            let d = a - b * e;
            *v = if d.abs() > 1e-300 { *v / d } else { 0.0 };
        }
        self.inverse(c)
    }
}

fn transpose(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// Least-squares solution of `∇I ≈ g`, shifted so its mean is `mean_anchor`.
/// Masked field entries are ignored. Not clamped.
pub fn poisson_reconstruct(g: &GradientField, mean_anchor: f64) -> Result<Image> {
    if g.gx.iter().chain(&g.gy).any(|v| !v.is_finite()) {
        return Err(GdpError::Numeric("gradient field has non-finite entries".into()));
    }
    let rhs = divergence(g);
    let sol = NeumannDct::new(g.width(), g.height()).solve(&rhs.map(|v| -v), 0.0, 1.0);
    let shift = mean_anchor - sol.mean();
    Ok(sol.map(|v| v + shift))
}

pub fn remap_linear(g: &GradientField, alpha: f64) -> Result<GradientField> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(GdpError::Input(format!("remap factor must be positive, got {alpha}")));
    }
    Ok(g.scaled(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NaturalizeMode {
    #[default]
    Linear,
    Nonlinear,
}

impl std::str::FromStr for NaturalizeMode {
    type Err = GdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(NaturalizeMode::Linear),
            "nonlinear" | "nonlinear-exact-spec" => Ok(NaturalizeMode::Nonlinear),
            _ => Err(GdpError::Input(format!("unknown naturalization mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RemapSpec {
    Linear { alpha: f64 },
    NonlinearExactSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemapInfo {
    /// Components that were constant and got mapped to the target median.
    pub degenerate: Vec<Axis>,
    pub curl_rms: f64,
    /// Components are specified independently of each other.
    pub independent_components: bool,
}

/// Exact histogram specification of each component onto the prior's
/// marginals. Ranks are taken over valid entries with ties broken by pixel
/// index; rank `r` of `n` maps to the target quantile `(r + ½)/n`.
pub fn remap_nonlinear(g: &GradientField, target: &PriorBundle) -> Result<(GradientField, RemapInfo)> {
    let mx = target.marginal(Axis::X)?;
    let my = target.marginal(Axis::Y)?;
    remap_nonlinear_to(g, &mx, &my)
}

pub fn remap_nonlinear_to(g: &GradientField, mx: &Marginal1D, my: &Marginal1D) -> Result<(GradientField, RemapInfo)> {
    let (w, h) = (g.width(), g.height());
    let mut out = g.clone();
    let mut info = RemapInfo { independent_components: true, ..Default::default() };
    let xs: Vec<usize> = (0..w * h).filter(|&i| g.gx_valid(i % w, i / w)).collect();
    let ys: Vec<usize> = (0..w * h).filter(|&i| g.gy_valid(i % w, i / w)).collect();
    if specify(&g.gx, &mut out.gx, &xs, mx) {
        info.degenerate.push(Axis::X);
    }
    if specify(&g.gy, &mut out.gy, &ys, my) {
        info.degenerate.push(Axis::Y);
    }
    info.curl_rms = out.curl_rms();
    Ok((out, info))
}

/// Returns `true` when the component was constant.
fn specify(src: &[f64], dst: &mut [f64], idx: &[usize], target: &Marginal1D) -> bool {
    if idx.is_empty() {
        return false;
    }
    let cdf = target.cdf();
    let quantile = |u: f64| -> f64 {
        let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        (k as i32 - BIN_MAX) as f64 / BIN_MAX as f64
    };
    let first = src[idx[0]];
    if idx.iter().all(|&i| src[i] == first) {
        let m = quantile(0.5);
        idx.iter().for_each(|&i| dst[i] = m);
        return true;
    }
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| src[a].total_cmp(&src[b]).then(a.cmp(&b)));
    let n = order.len() as f64;
    for (r, &i) in order.iter().enumerate() {
        dst[i] = quantile((r as f64 + 0.5) / n);
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalizeReport {
    pub mode: NaturalizeMode,
    pub n_f_before: f64,
    pub n_f_after: f64,
    pub hellinger_before: f64,
    pub hellinger_after: f64,
    pub curl_rms: f64,
    pub remap: RemapSpec,
    pub independent_components: bool,
    pub degenerate_components: Vec<Axis>,
}

/// Gradient → remap → Poisson reconstruction anchored at the input mean.
/// The output is not clamped.
pub fn naturalize_image(img: &Image, prior: &PriorBundle, mode: NaturalizeMode) -> Result<(Image, NaturalizeReport)> {
    let q = prior.histogram()?;
    let n_f_before = naturalness_factor(img, prior)?;
    let hellinger_before = distance(&accumulate(img)?, q, Metric::Hellinger)?;
    let g = gradient(img)?;
    let (field, remap, info) = match mode {
        NaturalizeMode::Linear => {
            let f = remap_linear(&g, n_f_before)?;
            let info = RemapInfo { curl_rms: f.curl_rms(), ..Default::default() };
            (f, RemapSpec::Linear { alpha: n_f_before }, info)
        }
        NaturalizeMode::Nonlinear => {
            let (f, info) = remap_nonlinear(&g, prior)?;
            (f, RemapSpec::NonlinearExactSpec, info)
        }
    };
    let out = poisson_reconstruct(&field, img.mean())?;
    let n_f_after = naturalness_factor(&out, prior)?;
    let hellinger_after = distance(&accumulate(&out)?, q, Metric::Hellinger)?;
    let report = NaturalizeReport {
        mode,
        n_f_before,
        n_f_after,
        hellinger_before,
        hellinger_after,
        curl_rms: info.curl_rms,
        remap,
        independent_components: info.independent_components,
        degenerate_components: info.degenerate,
    };
    Ok((out, report))
}

/// Histogram of a remapped field, for checking a remap before reconstruction.
pub fn field_marginal(g: &GradientField, axis: Axis) -> Result<Marginal1D> {
    Ok(crate::spectrum::marginal(&accumulate_field(g)?, axis))
}
