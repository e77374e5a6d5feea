//! Noise level estimation from the fitted `T` through a calibration curve
//! `σ̃(T) = Σ qᵢ exp(sᵢ T)` with `qᵢ > 0`, `sᵢ < 0`.

use std::path::Path;
use std::sync::OnceLock;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::image::{add_gaussian_noise, Image};
use crate::models::{fit_t, DomainConvention, TEstimator};
use crate::spectrum::{accumulate, mean_marginal};
use crate::synth;

/// Published two-term fit, kept for reference only (its `T` scale differs).
pub const PUBLISHED_TERMS: [(f64, f64); 2] = [(772.6, -5321.0), (0.9538, -931.2)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub q: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub sse: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub terms: Vec<Term>,
    pub fit_stats: FitStats,
    pub domain_convention: DomainConvention,
    pub t_estimator: TEstimator,
    /// Noisy calibration images were clamped to `[0, 1]`.
    pub clamp_noisy: bool,
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// How calibration samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_terms: usize,
    pub t_estimator: TEstimator,
    pub domain_convention: DomainConvention,
    pub clamp_noisy: bool,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_terms: 2,
            t_estimator: TEstimator::Anchored,
            domain_convention: DomainConvention::Unit,
            clamp_noisy: true,
            seed: 0x5eed,
        }
    }
}

/// Noise levels `0.02, 0.04, …, 0.40`.
pub fn default_sigmas() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.02).collect()
}

/// Synthetic corpus behind the built-in calibration: images, side, first seed.
pub const BUNDLED_CORPUS: (usize, usize, u64) = (12, 128, 2000);

impl Calibration {
    pub fn predict(&self, t: f64) -> f64 {
        self.terms.iter().map(|k| k.q * (k.s * t).exp()).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() || self.terms.iter().any(|k| !(k.q > 0.0) || !(k.s < 0.0)) {
            return Err(GdpError::Input("calibration terms need q > 0 and s < 0".into()));
        }
        Ok(())
    }

    /// Built on the shipped synthetic corpus at first use.
    pub fn bundled() -> Result<Calibration> {
        static CELL: OnceLock<std::result::Result<Calibration, String>> = OnceLock::new();
        CELL.get_or_init(|| {
            let (n, side, seed) = BUNDLED_CORPUS;
            let imgs = synth::natural_corpus(n, side, side, seed);
            build_calibration(&imgs, &default_sigmas(), &CalibrationConfig::default())
                .map(|mut c| {
                    c.provenance = format!("{n} synthetic dead-leaves images {side}x{side}, seeds {seed}..");
                    c
                })
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(GdpError::Numeric)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Calibration> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GdpError::Io { path: path.to_path_buf(), source: e })?;
        let c: Calibration = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| GdpError::Io { path: path.to_path_buf(), source: e })
    }
}

/// `(σ, T)` pairs for every image and noise level.
pub fn calibration_samples(images: &[Image], sigmas: &[f64], cfg: &CalibrationConfig) -> Result<Vec<(f64, f64)>> {
    let jobs: Vec<(usize, usize)> =
        (0..images.len()).flat_map(|i| (0..sigmas.len()).map(move |j| (i, j))).collect();
    jobs.par_iter()
        .map(|&(i, j)| {
            let seed = cfg.seed.wrapping_add((i * 1_000 + j) as u64);
            let mut noisy = add_gaussian_noise(&images[i], sigmas[j], seed);
            if cfg.clamp_noisy {
                noisy = noisy.clamped();
            }
            let t = fit_t(&mean_marginal(&accumulate(&noisy)?), cfg.domain_convention, cfg.t_estimator)?;
            Ok((sigmas[j], t))
        })
        .collect()
}

pub fn build_calibration(images: &[Image], sigmas: &[f64], cfg: &CalibrationConfig) -> Result<Calibration> {
    if images.len() < 3 || sigmas.len() < 5 {
        return Err(GdpError::Input(format!(
            "calibration needs at least 3 images and 5 noise levels, got {} and {}",
            images.len(),
            sigmas.len()
        )));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(GdpError::Input("noise levels must be finite and nonnegative".into()));
    }
    let samples = calibration_samples(images, sigmas, cfg)?;
    let mut warnings = Vec::new();
    if !mean_t_decreasing(&samples, sigmas) {
        let w = "mean T is not strictly decreasing in sigma; calibration quality is doubtful".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let (terms, fit_stats) = fit_mixture(&samples, cfg.n_terms)?;
    Ok(Calibration {
        terms,
        fit_stats,
        domain_convention: cfg.domain_convention,
        t_estimator: cfg.t_estimator,
        clamp_noisy: cfg.clamp_noisy,
        provenance: format!("{} images x {} noise levels", images.len(), sigmas.len()),
        warnings,
    })
}

fn mean_t_decreasing(samples: &[(f64, f64)], sigmas: &[f64]) -> bool {
    let mut levels: Vec<f64> = sigmas.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let means: Vec<f64> = levels
        .iter()
        .map(|&s| {
            let ts: Vec<f64> = samples.iter().filter(|p| p.0 == s).map(|p| p.1).collect();
            ts.iter().sum::<f64>() / ts.len() as f64
        })
        .collect();
    means.windows(2).all(|w| w[1] < w[0])
}

struct MixtureProblem<'a> {
    data: &'a [(f64, f64)],
    /// `[ln q₁, ln(−s₁), ln q₂, ln(−s₂), …]`
    z: DVector<f64>,
}

impl MixtureProblem<'_> {
    fn terms(&self) -> Vec<Term> {
        self.z.as_slice().chunks(2).map(|c| Term { q: c[0].exp(), s: -c[1].exp() }).collect()
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for MixtureProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, z: &DVector<f64>) {
        self.z.copy_from(z);
    }

    fn params(&self) -> DVector<f64> {
        self.z.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let terms = self.terms();
        let r = DVector::from_iterator(
            self.data.len(),
            self.data.iter().map(|&(sigma, t)| terms.iter().map(|k| k.q * (k.s * t).exp()).sum::<f64>() - sigma),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let terms = self.terms();
        let mut j = DMatrix::zeros(self.data.len(), self.z.len());
        for (row, &(_, t)) in self.data.iter().enumerate() {
            for (i, k) in terms.iter().enumerate() {
                let e = k.q * (k.s * t).exp();
                j[(row, 2 * i)] = e;
                j[(row, 2 * i + 1)] = e * k.s * t;
            }
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

fn sse_of(data: &[(f64, f64)], terms: &[Term]) -> f64 {
    data.iter()
        .map(|&(sigma, t)| {
            let r = terms.iter().map(|k| k.q * (k.s * t).exp()).sum::<f64>() - sigma;
            r * r
        })
        .sum()
}

/// Damped least-squares fit of an `n`-term exponential mixture to `(σ, T)`.
pub fn fit_mixture(data: &[(f64, f64)], n_terms: usize) -> Result<(Vec<Term>, FitStats)> {
    if n_terms == 0 || data.len() < 2 * n_terms + 1 {
        return Err(GdpError::Input(format!("{} points cannot determine {n_terms} terms", data.len())));
    }
    // Single-exponential start from a log-linear fit on the positive points.
    let pos: Vec<(f64, f64)> = data.iter().filter(|p| p.0 > 0.0).copied().collect();
    if pos.len() < 2 {
        return Err(GdpError::Estimation("calibration data has fewer than 2 positive noise levels".into()));
    }
    let n = pos.len() as f64;
    let mt = pos.iter().map(|p| p.1).sum::<f64>() / n;
    let ml = pos.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let stt = pos.iter().map(|p| (p.1 - mt).powi(2)).sum::<f64>();
    let slt = pos.iter().map(|p| (p.1 - mt) * (p.0.ln() - ml)).sum::<f64>();
    let s0 = if stt > 0.0 && slt < 0.0 { slt / stt } else { -1.0 };
    let q0 = (ml - s0 * mt).exp();

    let mut starts = Vec::new();
    for spread in [1.0f64, 2.0, 4.0, 10.0] {
        let z: Vec<f64> = (0..n_terms)
            .flat_map(|i| {
                let f = if n_terms == 1 { 1.0 } else { spread.powf(i as f64 / (n_terms - 1) as f64 * 2.0 - 1.0) };
                let s = s0 * f;
                // Each term carries an equal share at the mean T.
                let q = q0 * ((s0 - s) * mt).exp() / n_terms as f64;
                [q.ln(), (-s).ln()]
            })
            .collect();
        starts.push(DVector::from_vec(z));
    }
    let mut best: Option<(Vec<Term>, f64)> = None;
    for z in starts {
        let (p, _) = LevenbergMarquardt::new().with_patience(500).minimize(MixtureProblem { data, z });
        let terms = p.terms();
        let sse = sse_of(data, &terms);
        if sse.is_finite() && best.as_ref().map_or(true, |b| sse < b.1) {
            best = Some((terms, sse));
        }
    }
    let (mut terms, sse) = best.ok_or_else(|| GdpError::Numeric("mixture fit produced no finite solution".into()))?;
    terms.sort_by(|a, b| a.s.total_cmp(&b.s));
    let m = data.iter().map(|p| p.0).sum::<f64>() / data.len() as f64;
    let sst = data.iter().map(|p| (p.0 - m).powi(2)).sum::<f64>();
    let stats = FitStats {
        sse,
        rmse: (sse / data.len() as f64).sqrt(),
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        n_points: data.len(),
    };
    Ok((terms, stats))
}

pub fn estimate_sigma(img: &Image, cal: &Calibration) -> Result<f64> {
    let t = fit_t(&mean_marginal(&accumulate(img)?), cal.domain_convention, cal.t_estimator)?;
    Ok(cal.predict(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: usize,
    /// `(σ, σ̂)` for every held-out image and level.
    pub predictions: Vec<(f64, f64)>,
}

impl CrossValidation {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        let ok = self.predictions.iter().filter(|(s, e)| (s - e).abs() < tol).count();
        ok as f64 / self.predictions.len().max(1) as f64
    }
}

/// K-fold cross-validation over images (fold `k` holds images `i ≡ k mod K`).
pub fn cross_validate(images: &[Image], sigmas: &[f64], folds: usize, cfg: &CalibrationConfig) -> Result<CrossValidation> {
    if folds < 2 || folds > images.len() {
        return Err(GdpError::Input(format!("cannot split {} images into {folds} folds", images.len())));
    }
    // Samples for every image once, reused across folds.
    let per_image: Vec<Vec<(f64, f64)>> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let c = CalibrationConfig { seed: cfg.seed.wrapping_add(i as u64 * 1_000), ..*cfg };
            calibration_samples(std::slice::from_ref(img), sigmas, &c)
        })
        .collect::<Result<_>>()?;
    let mut predictions = Vec::new();
    for k in 0..folds {
        let train: Vec<(f64, f64)> =
            per_image.iter().enumerate().filter(|(i, _)| i % folds != k).flat_map(|(_, s)| s.iter().copied()).collect();
        let (terms, _) = fit_mixture(&train, cfg.n_terms)?;
        for (_, s) in per_image.iter().enumerate().filter(|(i, _)| i % folds == k) {
            for &(sigma, t) in s {
                let est = terms.iter().map(|q| q.q * (q.s * t).exp()).sum::<f64>().clamp(0.0, 1.0);
                predictions.push((sigma, est));
            }
        }
    }
    Ok(CrossValidation { folds, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_mixture() {
        let truth = [Term { q: 40.0, s: -1.5 }, Term { q: 2.0, s: -0.4 }];
        let data: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = 2.0 + i as f64 * 0.2;
                (truth.iter().map(|k| k.q * (k.s * t).exp()).sum(), t)
            })
            .collect();
        let (terms, stats) = fit_mixture(&data, 2).unwrap();
        assert!(stats.sse < 1e-12, "{stats:?}");
        for (got, want) in terms.iter().zip(&truth) {
            assert!((got.q / want.q - 1.0).abs() < 0.05 && (got.s / want.s - 1.0).abs() < 0.05, "{terms:?}");
        }
    }

    #[test]
    fn prediction_is_clamped_and_decreasing() {
        let cal = Calibration {
            terms: vec![Term { q: 5.0, s: -0.5 }],
            fit_stats: FitStats { sse: 0.0, rmse: 0.0, r2: 1.0, n_points: 0 },
            domain_convention: DomainConvention::Unit,
            t_estimator: TEstimator::Anchored,
            clamp_noisy: true,
            provenance: String::new(),
            warnings: vec![],
        };
        assert_eq!(cal.predict(0.0), 1.0);
        assert!(cal.predict(4.0) > cal.predict(5.0));
    }

    #[test]
    fn too_few_inputs_rejected() {
        let imgs = synth::natural_corpus(2, 32, 32, 1);
        assert!(build_calibration(&imgs, &default_sigmas(), &CalibrationConfig::default()).is_err());
    }
}
