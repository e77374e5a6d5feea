//! Full-reference quality scores, gradient-distribution scores, and
//! correlation statistics.

use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::Image;
use crate::prior::{naturalness_factor, PriorBundle};
use crate::spectrum::{accumulate, distance, pearson, Metric};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10·log10(1/MSE)` for images on `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero first row and column.
fn integral(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean SSIM over all 8×8 windows (stride 1, uniform weights).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(GdpError::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let (da, db) = (a.data(), b.data());
    let sa = integral(w, h, |i| da[i]);
    let sb = integral(w, h, |i| db[i]);
    let saa = integral(w, h, |i| da[i] * da[i]);
    let sbb = integral(w, h, |i| db[i] * db[i]);
    let sab = integral(w, h, |i| da[i] * db[i]);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let rect = |s: &[f64], x: usize, y: usize| {
        let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
        s[y1 * (w + 1) + x1] - s[y * (w + 1) + x1] - s[y1 * (w + 1) + x] + s[y * (w + 1) + x]
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (ma, mb) = (rect(&sa, x, y) / n, rect(&sb, x, y) / n);
            let va = (rect(&saa, x, y) / n - ma * ma).max(0.0);
            let vb = (rect(&sbb, x, y) / n - mb * mb).max(0.0);
            let cov = rect(&sab, x, y) / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// What an image's gradient distribution is scored against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// Distance between the two images' gradient histograms.
    Image(&'a Image),
    /// Distance between the image's gradient histogram and the prior.
    Prior(&'a PriorBundle),
    /// `|N_f(reference) − N_f(img)|` under the prior.
    NaturalnessFactor { reference: &'a Image, prior: &'a PriorBundle },
}

pub fn score(img: &Image, reference: Reference<'_>, metric: Metric) -> Result<f64> {
    match reference {
        Reference::Image(r) => distance(&accumulate(r)?, &accumulate(img)?, metric),
        Reference::Prior(p) => distance(&accumulate(img)?, p.histogram()?, metric),
        Reference::NaturalnessFactor { reference, prior } => {
            Ok((naturalness_factor(reference, prior)? - naturalness_factor(img, prior)?).abs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pcc: f64,
    pub scc: f64,
    pub kcc: f64,
}

fn check_lists(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(GdpError::Input(format!("need two equal-length lists of at least 3, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(GdpError::Input("lists contain non-finite values".into()));
    }
    Ok(())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lists(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall's tau-b.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lists(x, y)?;
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).expect("finite");
            let dy = (y[i] - y[j]).partial_cmp(&0.0).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                _ if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let d = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    if d == 0.0 {
        return Err(GdpError::UndefinedCorrelation("a list has zero variance".into()));
    }
    Ok((conc - disc) as f64 / d)
}

pub fn rank_correlations(x: &[f64], y: &[f64]) -> Result<Correlations> {
    check_lists(x, y)?;
    Ok(Correlations { pcc: pearson(x, y)?, scc: spearman(x, y)?, kcc: kendall(x, y)? })
}
