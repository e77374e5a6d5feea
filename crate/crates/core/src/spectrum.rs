//! Empirical gradient distributions on the 8-bit bin grid `[-255, 255]²`.
//!
//! Gradients of `[0, 1]` images are multiplied by 255 and rounded to the
//! nearest integer bin. Only pixels where both forward differences are valid
//! are counted.

use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{gradient, GradientField, Image};

pub const BIN_MAX: i32 = 255;
pub const NBINS: usize = 511;

/// Bin index for a gradient value on the `[0,1]` intensity scale.
#[inline]
pub fn bin_of(g: f64) -> i32 {
    ((g * 255.0).round() as i64).clamp(-(BIN_MAX as i64), BIN_MAX as i64) as i32
}

#[inline]
fn idx(u: i32, v: i32) -> usize {
    (v + BIN_MAX) as usize * NBINS + (u + BIN_MAX) as usize
}

/// How per-image histograms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Every image contributes equally (mean of per-image distributions).
    #[default]
    Images,
    /// Every pixel contributes equally.
    Pixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Normalized 2D histogram of gradient pairs `(u, v)`, `u` = horizontal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistogramDoc", into = "HistogramDoc")]
pub struct GradHist2D {
    bins: Vec<f64>,
    count: u64,
    images: u64,
    weight_mode: WeightMode,
}

impl GradHist2D {
    /// Histogram with all mass in the single bin `(u, v)`.
    pub fn delta(u: i32, v: i32) -> Self {
        let mut bins = vec![0.0; NBINS * NBINS];
        bins[idx(u, v)] = 1.0;
        Self { bins, count: 1, images: 1, weight_mode: WeightMode::Images }
    }

    /// Builds a histogram from arbitrary nonnegative weights (row-major,
    /// `v` major), normalizing them.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != NBINS * NBINS {
            return Err(GdpError::Dimension(format!("expected {} bins, got {}", NBINS * NBINS, weights.len())));
        }
        if weights.iter().any(|w| !(w >= &0.0) || !w.is_finite()) {
            return Err(GdpError::Input("histogram weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(GdpError::Input("histogram has no mass".into()));
        }
        Ok(Self {
            bins: weights.into_iter().map(|w| w / sum).collect(),
            count: 0,
            images: 1,
            weight_mode: WeightMode::Images,
        })
    }

    /// Builds from a function of the bin coordinates.
    pub fn from_fn(f: impl Fn(i32, i32) -> f64) -> Result<Self> {
        let mut w = Vec::with_capacity(NBINS * NBINS);
        for v in -BIN_MAX..=BIN_MAX {
            for u in -BIN_MAX..=BIN_MAX {
                w.push(f(u, v));
            }
        }
        Self::from_weights(w)
    }

    #[inline]
    pub fn get(&self, u: i32, v: i32) -> f64 {
        self.bins[idx(u, v)]
    }

    #[inline]
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn images(&self) -> u64 {
        self.images
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn with_weight_mode(mut self, mode: WeightMode) -> Self {
        self.weight_mode = mode;
        self
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Iterator over `(u, v, p)` for bins with `p > 0`.
    pub fn nonzero(&self) -> impl Iterator<Item = (i32, i32, f64)> + '_ {
        self.bins.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| {
            let v = (i / NBINS) as i32 - BIN_MAX;
            let u = (i % NBINS) as i32 - BIN_MAX;
            (u, v, p)
        })
    }

    pub fn nonzero_count(&self) -> usize {
        self.bins.iter().filter(|&&p| p > 0.0).count()
    }
}

/// Histogram of the valid gradients of one image.
pub fn accumulate(img: &Image) -> Result<GradHist2D> {
    let g = gradient(img)?;
    accumulate_field(&g)
}

/// Histogram of an arbitrary gradient field (e.g. a remapped one).
pub fn accumulate_field(g: &GradientField) -> Result<GradHist2D> {
    let (w, h) = (g.width(), g.height());
    let mut counts = vec![0u64; NBINS * NBINS];
    let mut n = 0u64;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let i = y * w + x;
            counts[idx(bin_of(g.gx[i]), bin_of(g.gy[i]))] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(GdpError::Dimension(format!("no valid gradients in {w}x{h} field")));
    }
    let inv = 1.0 / n as f64;
    Ok(GradHist2D {
        bins: counts.into_iter().map(|c| c as f64 * inv).collect(),
        count: n,
        images: 1,
        weight_mode: WeightMode::Images,
    })
}

/// Convex combination of two normalized histograms.
pub fn merge(a: &GradHist2D, b: &GradHist2D, weight_by: WeightMode) -> GradHist2D {
    let (wa, wb) = match weight_by {
        WeightMode::Images => (a.images as f64, b.images as f64),
        WeightMode::Pixels => (a.count as f64, b.count as f64),
    };
    let (wa, wb) = if wa + wb > 0.0 { (wa / (wa + wb), wb / (wa + wb)) } else { (0.5, 0.5) };
    GradHist2D {
        bins: a.bins.iter().zip(&b.bins).map(|(p, q)| wa * p + wb * q).collect(),
        count: a.count + b.count,
        images: a.images + b.images,
        weight_mode: weight_by,
    }
}

/// Corpus histogram: per-image histograms computed in parallel and merged.
pub fn accumulate_corpus(images: &[Image], weight_by: WeightMode) -> Result<GradHist2D> {
    use rayon::prelude::*;
    if images.is_empty() {
        return Err(GdpError::Input("empty corpus".into()));
    }
    let hists: Vec<GradHist2D> = images.par_iter().map(accumulate).collect::<Result<_>>()?;
    Ok(merge_all(&hists, weight_by))
}

/// Merges many histograms; equal to folding [`merge`] but computed in one pass.
pub fn merge_all(hists: &[GradHist2D], weight_by: WeightMode) -> GradHist2D {
    assert!(!hists.is_empty(), "merge_all of nothing");
    let weights: Vec<f64> = hists
        .iter()
        .map(|h| match weight_by {
            WeightMode::Images => h.images as f64,
            WeightMode::Pixels => h.count as f64,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut bins = vec![0.0; NBINS * NBINS];
    for (h, w) in hists.iter().zip(&weights) {
        let w = if total > 0.0 { w / total } else { 1.0 / hists.len() as f64 };
        for (b, p) in bins.iter_mut().zip(&h.bins) {
            *b += w * p;
        }
    }
    GradHist2D {
        bins,
        count: hists.iter().map(|h| h.count).sum(),
        images: hists.iter().map(|h| h.images).sum(),
        weight_mode: weight_by,
    }
}

/// 1D distribution over integer gradient bins `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal1D {
    bins: Vec<f64>,
}

impl Marginal1D {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != NBINS {
            return Err(GdpError::Dimension(format!("expected {NBINS} bins, got {}", weights.len())));
        }
        if weights.iter().any(|w| !(w >= &0.0) || !w.is_finite()) {
            return Err(GdpError::Input("marginal weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(GdpError::Input("marginal has no mass".into()));
        }
        Ok(Self { bins: weights.into_iter().map(|w| w / sum).collect() })
    }

    pub fn from_fn(f: impl Fn(i32) -> f64) -> Result<Self> {
        Self::from_weights((-BIN_MAX..=BIN_MAX).map(f).collect())
    }

    #[inline]
    pub fn get(&self, g: i32) -> f64 {
        self.bins[(g + BIN_MAX) as usize]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.bins.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i as i32 - BIN_MAX, p))
    }

    /// Equal-weight average of two marginals.
    pub fn average(&self, other: &Marginal1D) -> Marginal1D {
        Marginal1D { bins: self.bins.iter().zip(&other.bins).map(|(a, b)| 0.5 * (a + b)).collect() }
    }

    /// Inclusive cumulative sums.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.bins
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }
}

pub fn marginal(h: &GradHist2D, axis: Axis) -> Marginal1D {
    let mut out = vec![0.0; NBINS];
    for v in 0..NBINS {
        for u in 0..NBINS {
            let p = h.bins[v * NBINS + u];
            match axis {
                Axis::X => out[u] += p,
                Axis::Y => out[v] += p,
            }
        }
    }
    let sum: f64 = out.iter().sum();
    Marginal1D { bins: out.into_iter().map(|p| p / sum).collect() }
}

/// Average of the x and y marginals.
pub fn mean_marginal(h: &GradHist2D) -> Marginal1D {
    marginal(h, Axis::X).average(&marginal(h, Axis::Y))
}

/// Inclusive 2D prefix sums of a histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf2D {
    values: Vec<f64>,
}

impl Cdf2D {
    #[inline]
    pub fn at(&self, u: i32, v: i32) -> f64 {
        self.values[idx(u, v)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn cdf2d(h: &GradHist2D) -> Cdf2D {
    let mut values = h.bins.clone();
    for v in 0..NBINS {
        for u in 1..NBINS {
            values[v * NBINS + u] += values[v * NBINS + u - 1];
        }
    }
    for v in 1..NBINS {
        for u in 0..NBINS {
            values[v * NBINS + u] += values[(v - 1) * NBINS + u];
        }
    }
    Cdf2D { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    L1,
    /// Euclidean norm of the bin differences.
    L2,
    /// Root mean square bin difference (ℓ2 divided by √bins).
    Rms,
    /// `1 − cos∠(p, q)`.
    Cosine,
    /// `Σ (p−q)² / (p+q)` over bins with `p+q > 0`.
    Chi2,
    Hellinger,
    Kl,
    /// Mean of the two 1D Wasserstein-1 distances between marginals, in bins.
    EmdMarginal,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::L1,
        Metric::L2,
        Metric::Rms,
        Metric::Cosine,
        Metric::Chi2,
        Metric::Hellinger,
        Metric::Kl,
        Metric::EmdMarginal,
    ];

    pub fn is_symmetric(self) -> bool {
        !matches!(self, Metric::Kl)
    }
}

impl std::str::FromStr for Metric {
    type Err = GdpError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "l1" => Metric::L1,
            "l2" => Metric::L2,
            "rms" => Metric::Rms,
            "cosine" | "cos" => Metric::Cosine,
            "chi2" => Metric::Chi2,
            "hellinger" => Metric::Hellinger,
            "kl" => Metric::Kl,
            "emd" | "emd-marginal" | "emd_marginal" => Metric::EmdMarginal,
            other => return Err(GdpError::Input(format!("unknown metric {other:?}"))),
        })
    }
}

/// Default additive smoothing applied to `q` before KL.
pub const KL_EPS: f64 = 1e-12;

pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

pub fn l2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Evaluated as `½‖p/‖p‖ − q/‖q‖‖²`, equal to `1 − cos` and exactly zero for `p == q`.
pub fn cosine_distance(p: &[f64], q: &[f64]) -> f64 {
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    0.5 * p.iter().zip(q).map(|(a, b)| (a / np - b / nq).powi(2)).sum::<f64>()
}

pub fn chi2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum()
}

pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (0.5 * s).sqrt().min(1.0)
}

/// `Σ p log(p/q)`. With `smoothing = Some(ε)` and some bin where `p > 0` but
/// `q = 0`, `q` is replaced by `(q + ε)/Σ(q + ε)`; otherwise the exact value
/// is returned.
pub fn kl_divergence(p: &[f64], q: &[f64], smoothing: Option<f64>) -> Result<f64> {
    let uncovered = p.iter().zip(q).any(|(a, b)| *a > 0.0 && *b <= 0.0);
    let mut acc = 0.0;
    if uncovered {
        let eps = smoothing.ok_or(GdpError::Divergence)?;
        let z: f64 = q.iter().map(|b| b + eps).sum();
        for (a, b) in p.iter().zip(q) {
            if *a > 0.0 {
                acc += a * (a / ((b + eps) / z)).ln();
            }
        }
    } else {
        for (a, b) in p.iter().zip(q) {
            if *a > 0.0 {
                acc += a * (a / b).ln();
            }
        }
    }
    Ok(acc.max(0.0))
}

/// Wasserstein-1 distance between two 1D distributions on unit-spaced bins.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        acc += (cp - cq).abs();
    }
    acc
}

/// Distance between two histograms; KL uses the default smoothing [`KL_EPS`].
pub fn distance(p: &GradHist2D, q: &GradHist2D, metric: Metric) -> Result<f64> {
    distance_with(p, q, metric, Some(KL_EPS))
}

pub fn distance_with(p: &GradHist2D, q: &GradHist2D, metric: Metric, kl_smoothing: Option<f64>) -> Result<f64> {
    let (a, b) = (&p.bins[..], &q.bins[..]);
    Ok(match metric {
        Metric::L1 => l1(a, b),
        Metric::L2 => l2(a, b),
        Metric::Rms => l2(a, b) / (a.len() as f64).sqrt(),
        Metric::Cosine => cosine_distance(a, b),
        Metric::Chi2 => chi2(a, b),
        Metric::Hellinger => hellinger(a, b),
        Metric::Kl => kl_divergence(a, b, kl_smoothing)?,
        Metric::EmdMarginal => {
            let dx = wasserstein1(marginal(p, Axis::X).bins(), marginal(q, Axis::X).bins());
            let dy = wasserstein1(marginal(p, Axis::Y).bins(), marginal(q, Axis::Y).bins());
            0.5 * (dx + dy)
        }
    })
}

/// Shannon entropy in nats of any probability vector.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn entropy(h: &GradHist2D) -> f64 {
    entropy_of(&h.bins)
}

/// One point of a sparsity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub cutoff: f64,
    /// Fraction of bins with probability above the cutoff.
    pub s_p: f64,
    /// Probability mass carried by those bins.
    pub c_h: f64,
}

pub fn sparsity_curve_of(p: &[f64], levels: &[f64]) -> Result<Vec<SparsityPoint>> {
    if levels.iter().any(|&c| !(c >= 0.0)) {
        return Err(GdpError::Input("sparsity cutoffs must be nonnegative".into()));
    }
    let n = p.len() as f64;
    Ok(levels
        .iter()
        .map(|&cutoff| {
            let (k, mass) = p
                .iter()
                .filter(|&&v| v > cutoff)
                .fold((0usize, 0.0), |(k, m), &v| (k + 1, m + v));
            SparsityPoint { cutoff, s_p: k as f64 / n, c_h: mass }
        })
        .collect())
}

pub fn sparsity_curve(h: &GradHist2D, levels: &[f64]) -> Result<Vec<SparsityPoint>> {
    sparsity_curve_of(&h.bins, levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrScale {
    Linear,
    /// Coordinates transformed by `sign(g)·ln(1+|g|)` (bin units) before
    /// correlating. This transform is a guess at the published "(log scale)"
    /// row and is labeled as such in reports.
    Log,
}

/// Pearson correlation of the two gradient coordinates under histogram weights.
pub fn component_correlation(h: &GradHist2D, scale: CorrScale) -> Result<f64> {
    let t = |g: i32| -> f64 {
        let g = g as f64;
        match scale {
            CorrScale::Linear => g,
            CorrScale::Log => g.signum() * g.abs().ln_1p(),
        }
    };
    let (mut mu, mut mv, mut w) = (0.0, 0.0, 0.0);
    for (u, v, p) in h.nonzero() {
        mu += p * t(u);
        mv += p * t(v);
        w += p;
    }
    mu /= w;
    mv /= w;
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for (u, v, p) in h.nonzero() {
        let du = t(u) - mu;
        let dv = t(v) - mv;
        suu += p * du * du;
        svv += p * dv * dv;
        suv += p * du * dv;
    }
    if suu <= 0.0 || svv <= 0.0 {
        return Err(GdpError::UndefinedCorrelation("a gradient component has zero variance".into()));
    }
    Ok((suv / (suu * svv).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return Err(GdpError::UndefinedCorrelation("fewer than two samples".into()));
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(GdpError::UndefinedCorrelation("zero variance sample".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Horizontal order-`d` forward difference image (`d = 0` is the image itself).
fn horizontal_derivative(img: &Image, order: usize) -> (usize, usize, Vec<f64>) {
    let (mut w, h) = (img.width(), img.height());
    let mut data = img.data().to_vec();
    for _ in 0..order {
        let nw = w - 1;
        let mut next = Vec::with_capacity(nw * h);
        for y in 0..h {
            for x in 0..nw {
                next.push(data[y * w + x + 1] - data[y * w + x]);
            }
        }
        data = next;
        w = nw;
    }
    (w, h, data)
}

/// `AC(d, r)` for `r = 0..=max_shift`: correlation between the order-`d`
/// derivative image and its horizontal shift by `r`.
pub fn autocorrelation(img: &Image, order: usize, max_shift: usize) -> Result<Vec<f64>> {
    if order > 2 {
        return Err(GdpError::Input(format!("derivative order {order} not in 0..=2")));
    }
    if img.width() < order + max_shift + 2 {
        return Err(GdpError::Dimension(format!(
            "width {} too small for order {order} and shift {max_shift}",
            img.width()
        )));
    }
    let (w, h, f) = horizontal_derivative(img, order);
    let mut out = Vec::with_capacity(max_shift + 1);
    for r in 0..=max_shift {
        let n = (w - r) * h;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for y in 0..h {
            for x in 0..w - r {
                a.push(f[y * w + x]);
                b.push(f[y * w + x + r]);
            }
        }
        out.push(if r == 0 {
            // Identical samples; still require nonzero variance.
            pearson(&a, &b).map(|_| 1.0)?
        } else {
            pearson(&a, &b)?
        });
    }
    Ok(out)
}

/// JSON document for histogram persistence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramDoc {
    pub version: u32,
    pub bin_range: [i32; 2],
    pub weight_mode: WeightMode,
    /// Row-major (`v` major) probabilities.
    pub probabilities: Vec<f64>,
    #[serde(default)]
    pub pixel_count: u64,
    pub image_count: u64,
}

impl From<GradHist2D> for HistogramDoc {
    fn from(h: GradHist2D) -> Self {
        HistogramDoc {
            version: 1,
            bin_range: [-BIN_MAX, BIN_MAX],
            weight_mode: h.weight_mode,
            probabilities: h.bins,
            pixel_count: h.count,
            image_count: h.images,
        }
    }
}

impl TryFrom<HistogramDoc> for GradHist2D {
    type Error = GdpError;

    fn try_from(doc: HistogramDoc) -> Result<Self> {
        if doc.bin_range != [-BIN_MAX, BIN_MAX] {
            return Err(GdpError::Input(format!("unsupported bin range {:?}", doc.bin_range)));
        }
        let sum: f64 = doc.probabilities.iter().sum();
        let exact = (sum - 1.0).abs() <= 1e-9;
        let mut h = GradHist2D::from_weights(doc.probabilities.clone())?;
        // Already normalized: keep the stored values bit for bit.
        if exact {
            h.bins = doc.probabilities;
        }
        h.count = doc.pixel_count;
        h.images = doc.image_count;
        h.weight_mode = doc.weight_mode;
        Ok(h)
    }
}

/// CSV `g,px,py` of both marginals.
pub fn marginals_csv(h: &GradHist2D) -> String {
    let mx = marginal(h, Axis::X);
    let my = marginal(h, Axis::Y);
    let mut s = String::from("g,px,py\n");
    for g in -BIN_MAX..=BIN_MAX {
        s.push_str(&format!("{g},{:e},{:e}\n", mx.get(g), my.get(g)));
    }
    s
}

pub fn sparsity_csv(points: &[SparsityPoint]) -> String {
    let mut s = String::from("cutoff,s_p,c_h\n");
    for p in points {
        s.push_str(&format!("{:e},{:e},{:e}\n", p.cutoff, p.s_p, p.c_h));
    }
    s
}
