//! Learned gradient distribution prior: corpus learning, persistence, the
//! naturalness factor `N_f`, and the local naturalness map `N_w`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{gradient, load_image, Image};
use crate::models::{self, fit, fit_t, DomainConvention, Family, FitInput, FitReport, ModelParams, TEstimator};
use crate::spectrum::{
    self, accumulate, accumulate_corpus, bin_of, entropy, marginal, mean_marginal, Axis, GradHist2D, Marginal1D,
    Metric, WeightMode, KL_EPS, NBINS,
};
use crate::synth;

pub const PRIOR_VERSION: u32 = 1;
/// Published CDF-model scale for a large natural-image corpus.
pub const PUBLISHED_T_PR: f64 = 0.46;
/// Published Model 2 `b2` for a large natural-image corpus.
pub const PUBLISHED_B_PR: f64 = 0.0239;
/// Windows with fewer valid gradients than this are flagged.
pub const MIN_WINDOW_GRADIENTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBundle {
    pub version: u32,
    pub domain_convention: DomainConvention,
    pub t_pr: f64,
    pub b_pr: f64,
    #[serde(default)]
    pub t_estimator: TEstimator,
    #[serde(default)]
    pub model_fits: Vec<FitReport>,
    #[serde(default)]
    pub entropy: Option<f64>,
    /// `t_pr`/`b_pr` are published constants rather than values learned with
    /// this toolkit's estimators.
    #[serde(default)]
    pub published_defaults: bool,
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub histogram: Option<GradHist2D>,
}

const BUNDLED_JSON: &str = include_str!("../assets/default_prior.json");

impl PriorBundle {
    /// Builds a bundle, validating its invariants.
    pub fn new(
        hist: Option<GradHist2D>,
        t_pr: f64,
        b_pr: f64,
        domain_convention: DomainConvention,
        t_estimator: TEstimator,
    ) -> Result<Self> {
        let b = PriorBundle {
            version: PRIOR_VERSION,
            domain_convention,
            t_pr,
            b_pr,
            t_estimator,
            model_fits: Vec::new(),
            entropy: hist.as_ref().map(entropy),
            published_defaults: false,
            provenance: String::new(),
            histogram: hist,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_pr > 0.0) || !(self.b_pr > 0.0) {
            return Err(GdpError::Input(format!("prior needs t_pr > 0 and b_pr > 0, got {} and {}", self.t_pr, self.b_pr)));
        }
        if let Some(h) = &self.histogram {
            if (h.total() - 1.0).abs() > 1e-9 {
                return Err(GdpError::Input("prior histogram is not normalized".into()));
            }
        }
        Ok(())
    }

    /// Published constants with a histogram regenerated from the synthetic
    /// natural-like corpus (the shipped file elides it).
    pub fn bundled() -> PriorBundle {
        static CELL: OnceLock<PriorBundle> = OnceLock::new();
        CELL.get_or_init(|| {
            let mut b: PriorBundle = serde_json::from_str(BUNDLED_JSON).expect("bundled prior parses");
            let corpus = synth::natural_corpus(BUNDLED_CORPUS.0, BUNDLED_CORPUS.1, BUNDLED_CORPUS.1, BUNDLED_CORPUS.2);
            let h = accumulate_corpus(&corpus, WeightMode::Images).expect("synthetic corpus is valid");
            b.entropy = Some(entropy(&h));
            b.histogram = Some(h);
            b
        })
        .clone()
    }

    pub fn histogram(&self) -> Result<&GradHist2D> {
        self.histogram.as_ref().ok_or_else(|| GdpError::Input("prior file has no histogram (it was elided)".into()))
    }

    pub fn marginal(&self, axis: Axis) -> Result<Marginal1D> {
        Ok(marginal(self.histogram()?, axis))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PriorBundle> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GdpError::Io { path: path.to_path_buf(), source: e })?;
        let b: PriorBundle = serde_json::from_str(&text)?;
        if b.version != PRIOR_VERSION {
            return Err(GdpError::Input(format!("unsupported prior version {}", b.version)));
        }
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>, elide_histogram: bool) -> Result<()> {
        let path = path.as_ref();
        let text = if elide_histogram {
            let mut b = self.clone();
            b.histogram = None;
            serde_json::to_string_pretty(&b)?
        } else {
            serde_json::to_string(self)?
        };
        std::fs::write(path, text).map_err(|e| GdpError::Io { path: path.to_path_buf(), source: e })
    }

    /// `T` of an image under this prior's estimator and domain convention.
    pub fn image_t(&self, img: &Image) -> Result<f64> {
        fit_t(&mean_marginal(&accumulate(img)?), self.domain_convention, self.t_estimator)
    }
}

/// Images, side length, and first seed of the corpus behind the bundled histogram.
pub const BUNDLED_CORPUS: (usize, usize, u64) = (12, 128, 1000);

/// Per-image statistics emitted while learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStat {
    pub name: String,
    pub entropy: f64,
    pub t: Option<f64>,
    pub hellinger: f64,
    pub l1: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub images_used: usize,
    pub skipped: Vec<String>,
    pub per_image: Vec<ImageStat>,
}

/// Learns a prior from image files. Unreadable files are skipped and listed.
pub fn learn_prior(corpus: &[PathBuf]) -> Result<(PriorBundle, LearnReport)> {
    if corpus.is_empty() {
        return Err(GdpError::Input("empty corpus".into()));
    }
    let loaded: Vec<(String, Result<Image>)> =
        corpus.par_iter().map(|p| (p.display().to_string(), load_image(p))).collect();
    let mut names = Vec::new();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (name, r) in loaded {
        match r {
            Ok(img) if img.width() >= 2 && img.height() >= 2 => {
                names.push(name);
                images.push(img);
            }
            Ok(_) => {
                log::warn!("skipping {name}: image smaller than 2x2");
                skipped.push(name);
            }
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                skipped.push(name);
            }
        }
    }
    if images.is_empty() {
        return Err(GdpError::Input(format!("no readable images among {} corpus entries", corpus.len())));
    }
    let provenance = format!("learned from {} image files ({} skipped)", images.len(), skipped.len());
    let (prior, mut report) = learn_prior_from_images(&images, &names, &provenance)?;
    report.skipped = skipped;
    Ok((prior, report))
}

/// Learns a prior from in-memory images.
pub fn learn_prior_from_images(
    images: &[Image],
    names: &[String],
    provenance: &str,
) -> Result<(PriorBundle, LearnReport)> {
    let domain = DomainConvention::Unit;
    let estimator = TEstimator::CdfTail;
    let hists: Vec<GradHist2D> = images.par_iter().map(accumulate).collect::<Result<_>>()?;
    let hist = spectrum::merge_all(&hists, WeightMode::Images);
    let t_pr = fit_t(&mean_marginal(&hist), domain, estimator)?;

    let mean = mean_marginal(&hist);
    let jobs: Vec<(Family, u8)> = [Family::Model1, Family::Model2, Family::HyperLap, Family::Laplace, Family::Gauss]
        .into_iter()
        .flat_map(|f| [(f, 1u8), (f, 2u8)])
        .chain([(Family::CdfModel, 1u8)])
        .collect();
    let fits: Vec<FitReport> = jobs
        .par_iter()
        .map(|&(f, d)| {
            let input = if d == 1 { FitInput::Marginal(&mean) } else { FitInput::Hist(&hist) };
            fit(input, f, domain)
        })
        .collect::<Result<_>>()?;
    let b_pr = fits
        .iter()
        .find_map(|r| match (r.dims, r.params) {
            (1, ModelParams::Model2 { b2, .. }) if b2 > 0.0 => Some(b2),
            _ => None,
        })
        .unwrap_or(PUBLISHED_B_PR);

    let per_image: Vec<ImageStat> = hists
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            Ok(ImageStat {
                name: names.get(i).cloned().unwrap_or_else(|| format!("image-{i}")),
                entropy: entropy(h),
                t: fit_t(&mean_marginal(h), domain, estimator).ok(),
                hellinger: spectrum::distance(h, &hist, Metric::Hellinger)?,
                l1: spectrum::distance(h, &hist, Metric::L1)?,
                kl: spectrum::distance(h, &hist, Metric::Kl)?,
            })
        })
        .collect::<Result<_>>()?;

    let prior = PriorBundle {
        version: PRIOR_VERSION,
        domain_convention: domain,
        t_pr,
        b_pr,
        t_estimator: estimator,
        model_fits: fits,
        entropy: Some(entropy(&hist)),
        published_defaults: false,
        provenance: provenance.to_string(),
        histogram: Some(hist),
    };
    prior.validate()?;
    Ok((prior, LearnReport { images_used: images.len(), skipped: Vec::new(), per_image }))
}

fn warn_published_scale(prior: &PriorBundle) {
    static ONCE: OnceLock<()> = OnceLock::new();
    if prior.published_defaults {
        ONCE.get_or_init(|| {
            log::warn!(
                "prior t_pr = {} is a published constant; its T scale is not commensurate with this \
                 toolkit's estimator, so N_f against it is only a relative measure (learn a prior for calibrated values)",
                prior.t_pr
            )
        });
    }
}

/// `N_f = T / t_pr`.
pub fn naturalness_factor(img: &Image, prior: &PriorBundle) -> Result<f64> {
    warn_published_scale(prior);
    Ok(prior.image_t(img)? / prior.t_pr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalnessMap {
    pub half_window: usize,
    pub map: Image,
    pub mean: f64,
    pub median: f64,
    /// Fewest valid gradients seen in any window.
    pub min_window_gradients: usize,
    pub low_confidence: bool,
}

/// Per-pixel KL divergence between the gradient histogram of the window of
/// half-width `w` around each pixel and the prior. Windows near the border are
/// shifted to stay inside the image.
pub fn naturalness_map(img: &Image, prior: &PriorBundle, w: usize) -> Result<NaturalnessMap> {
    let (width, height) = (img.width(), img.height());
    let ws = 2 * w + 1;
    if ws > width.min(height) {
        return Err(GdpError::Dimension(format!("window {ws} exceeds image {width}x{height}")));
    }
    let q = prior.histogram()?.bins();
    let g = gradient(img)?;
    let bins: Vec<u32> = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            if x + 1 < width && y + 1 < height {
                let (u, v) = (bin_of(g.gx[i]), bin_of(g.gy[i]));
                ((v + 255) as usize * NBINS + (u + 255) as usize) as u32
            } else {
                u32::MAX
            }
        })
        .collect();
    let log_q: Vec<f64> = q.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
    let z: f64 = q.iter().map(|v| v + KL_EPS).sum();
    let log_qs: Vec<f64> = q.iter().map(|&v| ((v + KL_EPS) / z).ln()).collect();

    let nx = width - ws + 1;
    let ny = height - ws + 1;
    // kl[y0][x0] for every window position.
    let rows: Vec<(Vec<f64>, usize)> = (0..ny)
        .into_par_iter()
        .map(|y0| {
            let mut acc = WindowAcc::new(&log_q, &log_qs, q);
            let mut out = Vec::with_capacity(nx);
            let mut min_n = usize::MAX;
            for y in y0..y0 + ws {
                for x in 0..ws {
                    acc.add(bins[y * width + x]);
                }
            }
            for x0 in 0..nx {
                if x0 > 0 {
                    for y in y0..y0 + ws {
                        acc.remove(bins[y * width + x0 - 1]);
                        acc.add(bins[y * width + x0 + ws - 1]);
                    }
                }
                min_n = min_n.min(acc.n);
                out.push(acc.kl());
            }
            (out, min_n)
        })
        .collect();
    let min_window_gradients = rows.iter().map(|r| r.1).min().unwrap_or(0);
    let map = Image::from_fn(width, height, |x, y| {
        let x0 = x.saturating_sub(w).min(nx - 1);
        let y0 = y.saturating_sub(w).min(ny - 1);
        rows[y0].0[x0]
    });
    let mut sorted = map.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let mean = map.mean();
    Ok(NaturalnessMap {
        half_window: w,
        map,
        mean,
        median,
        min_window_gradients,
        low_confidence: min_window_gradients < MIN_WINDOW_GRADIENTS,
    })
}

/// Mean and median `N_w` for several window half-widths.
pub fn naturalness_curve(img: &Image, prior: &PriorBundle, half_windows: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    half_windows
        .iter()
        .map(|&w| naturalness_map(img, prior, w).map(|m| (w, m.mean, m.median)))
        .collect()
}

/// Running sums for the KL of a window histogram against a fixed `q`:
/// `Σc log c`, `Σc log q` over covered bins, `Σc log q̃` with smoothed `q̃`,
/// and the number of occupied bins where `q = 0`.
struct WindowAcc<'a> {
    counts: Vec<u32>,
    n: usize,
    s_clogc: f64,
    s_clogq: f64,
    s_clogqs: f64,
    uncovered: usize,
    log_q: &'a [f64],
    log_qs: &'a [f64],
    q: &'a [f64],
}

#[inline]
fn xlogx(c: u32) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

impl<'a> WindowAcc<'a> {
    fn new(log_q: &'a [f64], log_qs: &'a [f64], q: &'a [f64]) -> Self {
        WindowAcc {
            counts: vec![0; NBINS * NBINS],
            n: 0,
            s_clogc: 0.0,
            s_clogq: 0.0,
            s_clogqs: 0.0,
            uncovered: 0,
            log_q,
            log_qs,
            q,
        }
    }

    fn add(&mut self, b: u32) {
        if b == u32::MAX {
            return;
        }
        let b = b as usize;
        let c = self.counts[b];
        self.s_clogc += xlogx(c + 1) - xlogx(c);
        self.s_clogqs += self.log_qs[b];
        if self.q[b] > 0.0 {
            self.s_clogq += self.log_q[b];
        } else if c == 0 {
            self.uncovered += 1;
        }
        self.counts[b] = c + 1;
        self.n += 1;
    }

    fn remove(&mut self, b: u32) {
        if b == u32::MAX {
            return;
        }
        let b = b as usize;
        let c = self.counts[b];
        self.s_clogc += xlogx(c - 1) - xlogx(c);
        self.s_clogqs -= self.log_qs[b];
        if self.q[b] > 0.0 {
            self.s_clogq -= self.log_q[b];
        } else if c == 1 {
            self.uncovered -= 1;
        }
        self.counts[b] = c - 1;
        self.n -= 1;
    }

    fn kl(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let cross = if self.uncovered == 0 { self.s_clogq } else { self.s_clogqs };
        (self.s_clogc / n - n.ln() - cross / n).max(0.0)
    }
}

/// Reference constants of the models, re-exported for reports.
pub use models::reference;
