//! Parametric gradient-distribution models: evaluation, log-domain fitting,
//! the closed-form `T` estimator, and model entropy.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};
use crate::spectrum::{entropy_of, mean_marginal, GradHist2D, Marginal1D, BIN_MAX, NBINS};

/// Coordinates used for gradient values when fitting or evaluating models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainConvention {
    /// Bin index divided by 255, so gradients lie in `[-1, 1]`.
    #[default]
    Unit,
    /// Raw 8-bit bin index in `[-255, 255]`.
    Bins,
}

impl DomainConvention {
    #[inline]
    pub fn coord(self, k: i32) -> f64 {
        match self {
            DomainConvention::Unit => k as f64 / 255.0,
            DomainConvention::Bins => k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Model1,
    Model2,
    HyperLap,
    Laplace,
    Gauss,
    CdfModel,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Model1, Family::Model2, Family::HyperLap, Family::Laplace, Family::Gauss, Family::CdfModel];
}

impl std::str::FromStr for Family {
    type Err = GdpError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "model1" | "model-1" | "m1" => Family::Model1,
            "model2" | "model-2" | "m2" => Family::Model2,
            "hyperlap" | "hyper-laplacian" | "hyper-lap" => Family::HyperLap,
            "laplace" | "laplacian" => Family::Laplace,
            "gauss" | "gaussian" => Family::Gauss,
            "cdf" | "cdf-model" | "cdfmodel" => Family::CdfModel,
            other => return Err(GdpError::Input(format!("unknown model family {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelParams {
    Model1 { a1: f64, b1: f64, c1: f64 },
    Model2 { a2: f64, b2: f64, c2: f64 },
    HyperLap { a0: f64, b0: f64, c0: f64 },
    Laplace { a0: f64, c0: f64 },
    Gauss { a0: f64, c0: f64 },
    CdfModel { t: f64 },
}

impl ModelParams {
    pub fn family(&self) -> Family {
        match self {
            ModelParams::Model1 { .. } => Family::Model1,
            ModelParams::Model2 { .. } => Family::Model2,
            ModelParams::HyperLap { .. } => Family::HyperLap,
            ModelParams::Laplace { .. } => Family::Laplace,
            ModelParams::Gauss { .. } => Family::Gauss,
            ModelParams::CdfModel { .. } => Family::CdfModel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelParams::Model1 { a1, b1, c1 } => a1 > 0.0 && b1 > 0.0 && c1.is_finite(),
            ModelParams::Model2 { a2, b2, c2 } => a2 >= 0.0 && b2 >= 0.0 && c2.is_finite(),
            ModelParams::HyperLap { a0, b0, c0 } => a0 > 0.0 && b0 > 0.0 && b0 <= 2.0 && c0.is_finite(),
            ModelParams::Laplace { a0, c0 } | ModelParams::Gauss { a0, c0 } => a0 >= 0.0 && c0.is_finite(),
            ModelParams::CdfModel { t } => t > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GdpError::Input(format!("parameters violate family constraints: {self:?}")))
        }
    }
}

#[inline]
fn pow_abs(u: f64, b: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.abs().powf(b)
    }
}

/// Unnormalized log-density at a 1D value (`g.len() == 1`) or a 2D pair.
pub fn eval_log_pdf(m: &ModelParams, g: &[f64]) -> Result<f64> {
    let (x, y) = match g {
        [x] => (*x, 0.0),
        [x, y] => (*x, *y),
        _ => return Err(GdpError::Dimension(format!("gradient must have 1 or 2 components, got {}", g.len()))),
    };
    let r2 = x * x + y * y;
    Ok(match *m {
        ModelParams::Model1 { a1, b1, c1 } => {
            let s = pow_abs(x, b1) + pow_abs(y, b1);
            2.0 * a1 * ((-s / a1).exp() - 1.0) + c1 * r2
        }
        ModelParams::Model2 { a2, b2, c2 } => {
            if b2 + r2 <= 0.0 {
                return Err(GdpError::Singularity("Model 2 with b2 = 0 at g = 0".into()));
            }
            -a2 * r2 - (b2 + r2).ln() + c2
        }
        ModelParams::HyperLap { a0, b0, c0 } => -a0 * (pow_abs(x, b0) + pow_abs(y, b0)) + c0,
        ModelParams::Laplace { a0, c0 } => -a0 * (x.abs() + y.abs()) + c0,
        ModelParams::Gauss { a0, c0 } => -a0 * r2 + c0,
        ModelParams::CdfModel { t } => {
            if r2 == 0.0 {
                return Err(GdpError::Singularity("CDF model density is singular at g = 0".into()));
            }
            -t * t * r2 - r2.ln()
        }
    })
}

/// Unnormalized CDF model `C̃(g)`. At `g = 0` the symmetric limit `½` is used.
pub fn cdf_model_raw(t: f64, g: f64) -> f64 {
    use statrs::function::erf::erf;
    if g == 0.0 {
        return 0.5;
    }
    let h = if g > 0.0 { 1.0 } else { 0.0 };
    -(-(t * g).powi(2)).exp() / g - t * std::f64::consts::PI.sqrt() * erf(t * g) + h
}

/// `C̃(g) / C̃(+∞)` where `C̃(+∞) = 1 − T√π`.
pub fn eval_cdf_model(t: f64, g: f64) -> Result<f64> {
    let total = cdf_model_limit(t)?;
    Ok(cdf_model_raw(t, g) / total)
}

/// Product form of the normalized CDF for a gradient pair.
pub fn eval_cdf_model_2d(t: f64, x: f64, y: f64) -> Result<f64> {
    Ok(eval_cdf_model(t, x)? * eval_cdf_model(t, y)?)
}

/// `lim_{g→∞} C̃(g)`; must be positive for the normalization to exist.
pub fn cdf_model_limit(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(GdpError::Input(format!("T must be positive, got {t}")));
    }
    let total = 1.0 - t * std::f64::consts::PI.sqrt();
    if total <= 0.0 {
        return Err(GdpError::Numeric(format!("C̃ has non-positive limit {total} for T = {t}")));
    }
    Ok(total)
}

/// Closed-form `T` for a 1D marginal.
///
/// Minimizes `Σ (log p + T²g² + 2 log|g| − c)²` over `T²` and the offset `c`
/// on the nonzero bins with `g ≠ 0`.
pub fn fit_t_closed_form(m: &Marginal1D, domain: DomainConvention) -> Result<f64> {
    let pts: Vec<(f64, f64)> = m
        .nonzero()
        .filter(|&(k, _)| k != 0)
        .map(|(k, p)| {
            let g = domain.coord(k);
            (g * g, p.ln() + 2.0 * g.abs().ln())
        })
        .collect();
    if pts.len() < 2 {
        return Err(GdpError::Estimation("marginal has fewer than two nonzero bins off the origin".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(GdpError::Estimation("all off-origin mass sits at a single |g|".into()));
    }
    let s = -sxy / sxx;
    if !(s > 0.0) {
        return Err(GdpError::Estimation(format!("radicand {s:.3e} is not positive")));
    }
    Ok(s.sqrt())
}

/// How `T` is estimated from a marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TEstimator {
    /// Closed-form least squares with a free log offset ([`fit_t_closed_form`]).
    /// Exact on model-family data; often undefined on real histograms.
    Regression,
    /// The same closed form with the offset pinned at 0 (`log p` used as is).
    /// Always defined for spread-out histograms and monotone in added noise.
    Anchored,
    /// Least-squares fit of the discretized model's tail mass to the
    /// empirical two-sided tail mass `P(|G| ≥ g)`, in the log domain.
    #[default]
    CdfTail,
}

impl std::str::FromStr for TEstimator {
    type Err = GdpError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "regression" | "closed-form" => TEstimator::Regression,
            "anchored" => TEstimator::Anchored,
            "cdf-tail" | "cdf" => TEstimator::CdfTail,
            other => return Err(GdpError::Input(format!("unknown T estimator {other:?}"))),
        })
    }
}

pub fn fit_t(m: &Marginal1D, domain: DomainConvention, estimator: TEstimator) -> Result<f64> {
    match estimator {
        TEstimator::Regression => fit_t_closed_form(m, domain),
        TEstimator::Anchored => fit_t_anchored(m, domain),
        TEstimator::CdfTail => fit_t_cdf(m, domain).map(|f| f.t),
    }
}

/// `T² = −Σ (log p + 2 log|g|) g² / Σ g⁴` over nonzero bins with `g ≠ 0`.
pub fn fit_t_anchored(m: &Marginal1D, domain: DomainConvention) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, p) in m.nonzero().filter(|&(k, _)| k != 0) {
        let g = domain.coord(k);
        num += (p.ln() + 2.0 * g.abs().ln()) * g * g;
        den += g.powi(4);
    }
    if den <= 0.0 {
        return Err(GdpError::Estimation("marginal has no mass off the origin".into()));
    }
    let s = -num / den;
    if !(s > 0.0) {
        return Err(GdpError::Estimation(format!("radicand {s:.3e} is not positive")));
    }
    Ok(s.sqrt())
}

/// Result of the tail fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfTailFit {
    pub t: f64,
    /// Fitted log amplitude of the tail.
    pub log_scale: f64,
    pub sse: f64,
    pub r2: f64,
    pub n_points: usize,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Fits `log P(|G| ≥ g_k) ≈ log K + log Σ_{j≥k} e^{−T²g_j²}/g_j²`.
/// `T` is found by a log-spaced scan followed by golden-section refinement.
pub fn fit_t_cdf(m: &Marginal1D, domain: DomainConvention) -> Result<CdfTailFit> {
    let n = BIN_MAX as usize;
    let mut tail = vec![0.0; n + 1];
    for k in (1..=n).rev() {
        let next = if k < n { tail[k + 1] } else { 0.0 };
        tail[k] = next + m.get(k as i32) + m.get(-(k as i32));
    }
    let pts: Vec<(usize, f64)> = (1..=n).filter(|&k| tail[k] > 0.0).map(|k| (k, tail[k].ln())).collect();
    if pts.len() < 2 {
        return Err(GdpError::Estimation("marginal has fewer than two tail levels off the origin".into()));
    }
    let g2: Vec<f64> = (0..=n).map(|k| domain.coord(k as i32).powi(2)).collect();
    let lg: Vec<f64> = g2.iter().map(|v| v.ln()).collect();
    let profile = |log_t: f64| -> (f64, f64) {
        let t2 = (2.0 * log_t).exp();
        let mut lq = vec![f64::NEG_INFINITY; n + 1];
        for k in (1..=n).rev() {
            let next = if k < n { lq[k + 1] } else { f64::NEG_INFINITY };
            lq[k] = log_add_exp(next, -t2 * g2[k] - lg[k]);
        }
        let off = pts.iter().map(|&(k, ls)| ls - lq[k]).sum::<f64>() / pts.len() as f64;
        let sse = pts.iter().map(|&(k, ls)| (ls - lq[k] - off).powi(2)).sum::<f64>();
        (sse, off)
    };
    let shift = match domain {
        DomainConvention::Unit => 0.0,
        DomainConvention::Bins => -(255f64).ln(),
    };
    let (lo, hi, steps) = ((1e-2f64).ln() + shift, (1e3f64).ln() + shift, 240usize);
    let grid: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| profile(x).0).collect();
    let ib = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("nonempty grid");
    if ib == 0 || ib == steps {
        return Err(GdpError::Estimation("tail fit optimum lies at the search boundary".into()));
    }
    let log_t = golden_section(|x| profile(x).0, grid[ib - 1], grid[ib + 1], 1e-12);
    let (sse, log_scale) = profile(log_t);
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sst: f64 = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
    Ok(CdfTailFit {
        t: log_t.exp(),
        log_scale,
        sse,
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 0.0 },
        n_points: pts.len(),
    })
}

/// Minimizes a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `T` of a 2D histogram via its averaged marginal.
pub fn fit_t_hist(h: &GradHist2D, domain: DomainConvention, estimator: TEstimator) -> Result<f64> {
    fit_t(&mean_marginal(h), domain, estimator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    pub dims: u8,
    pub params: ModelParams,
    /// Additive log constant fitted alongside families without their own
    /// constant (Model 1; for the CDF model, the log tail amplitude); 0 otherwise.
    pub log_offset: f64,
    pub sse: f64,
    pub r2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_points: usize,
    pub domain_convention: DomainConvention,
}

/// Data to fit: a 1D marginal or a 2D histogram.
#[derive(Debug, Clone, Copy)]
pub enum FitInput<'a> {
    Marginal(&'a Marginal1D),
    Hist(&'a GradHist2D),
}

struct Samples {
    x: Vec<f64>,
    y: Vec<f64>,
    target: Vec<f64>,
    dims: u8,
}

impl Samples {
    fn collect(input: FitInput<'_>, domain: DomainConvention) -> Self {
        let (mut x, mut y, mut target) = (Vec::new(), Vec::new(), Vec::new());
        let dims = match input {
            FitInput::Marginal(m) => {
                for (k, p) in m.nonzero() {
                    x.push(domain.coord(k));
                    y.push(0.0);
                    target.push(p.ln());
                }
                1
            }
            FitInput::Hist(h) => {
                for (u, v, p) in h.nonzero() {
                    x.push(domain.coord(u));
                    y.push(domain.coord(v));
                    target.push(p.ln());
                }
                2
            }
        };
        Samples { x, y, target, dims }
    }

    fn len(&self) -> usize {
        self.target.len()
    }

    fn sst(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.target.iter().sum::<f64>() / n;
        self.target.iter().map(|t| (t - mean).powi(2)).sum()
    }
}

/// Families fitted by LM, parameterized in an unconstrained space.
#[derive(Debug, Clone, Copy)]
enum LmFamily {
    /// `[ln a1, ln b1, c1, offset]`
    Model1,
    /// `[ln a2, ln b2, c2]`
    Model2,
    /// `[ln a0, logit(b0/2), c0]`
    HyperLap,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct LmProblem<'a> {
    fam: LmFamily,
    s: &'a Samples,
    z: DVector<f64>,
}

impl LmProblem<'_> {
    fn eval(&self, i: usize, jac: Option<&mut [f64]>) -> f64 {
        let (x, y) = (self.s.x[i], self.s.y[i]);
        let r2 = x * x + y * y;
        let z = &self.z;
        match self.fam {
            LmFamily::Model1 => {
                let (a, b, c, off) = (z[0].exp(), z[1].exp(), z[2], z[3]);
                let s = pow_abs(x, b) + pow_abs(y, b);
                let e = (-s / a).exp();
                if let Some(j) = jac {
                    let sb = log_pow_term(x, b) + log_pow_term(y, b);
                    j[0] = a * (2.0 * (e - 1.0) + 2.0 * (s / a) * e);
                    j[1] = b * (-2.0 * e * sb);
                    j[2] = r2;
                    j[3] = 1.0;
                }
                2.0 * a * (e - 1.0) + c * r2 + off
            }
            LmFamily::Model2 => {
                let (a, b, c) = (z[0].exp(), z[1].exp(), z[2]);
                if let Some(j) = jac {
                    j[0] = -a * r2;
                    j[1] = -b / (b + r2);
                    j[2] = 1.0;
                }
                -a * r2 - (b + r2).ln() + c
            }
            LmFamily::HyperLap => {
                let (a, c) = (z[0].exp(), z[2]);
                let b = 2.0 * logistic(z[1]);
                let s = pow_abs(x, b) + pow_abs(y, b);
                if let Some(j) = jac {
                    let sb = log_pow_term(x, b) + log_pow_term(y, b);
                    j[0] = -a * s;
                    j[1] = -a * sb * b * (1.0 - b / 2.0);
                    j[2] = 1.0;
                }
                -a * s + c
            }
        }
    }

    fn params(&self) -> (ModelParams, f64) {
        let z = &self.z;
        match self.fam {
            LmFamily::Model1 => (ModelParams::Model1 { a1: z[0].exp(), b1: z[1].exp(), c1: z[2] }, z[3]),
            LmFamily::Model2 => (ModelParams::Model2 { a2: z[0].exp(), b2: z[1].exp(), c2: z[2] }, 0.0),
            LmFamily::HyperLap => {
                (ModelParams::HyperLap { a0: z[0].exp(), b0: 2.0 * logistic(z[1]), c0: z[2] }, 0.0)
            }
        }
    }

    fn sse(&self) -> f64 {
        (0..self.s.len()).map(|i| (self.eval(i, None) - self.s.target[i]).powi(2)).sum()
    }
}

/// `∂|u|^b/∂b`
#[inline]
fn log_pow_term(u: f64, b: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        let a = u.abs();
        a.powf(b) * a.ln()
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for LmProblem<'_> {
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
        let r = DVector::from_iterator(self.s.len(), (0..self.s.len()).map(|i| self.eval(i, None) - self.s.target[i]));
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let np = self.z.len();
        let mut jm = DMatrix::zeros(self.s.len(), np);
        let mut row = vec![0.0; np];
        for i in 0..self.s.len() {
            self.eval(i, Some(&mut row));
            for (k, v) in row.iter().enumerate() {
                jm[(i, k)] = *v;
            }
        }
        jm.iter().all(|v| v.is_finite()).then_some(jm)
    }
}

/// Least squares `target ≈ Σ coef_k · basis_k`; returns the coefficients.
fn linear_lsq(basis: &[Vec<f64>], target: &[f64]) -> Option<Vec<f64>> {
    let n = target.len();
    let k = basis.len();
    let a = DMatrix::from_fn(n, k, |i, j| basis[j][i]);
    let b = DVector::from_column_slice(target);
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Deterministic starting points in the unconstrained parameterization; the
/// linear parameters of each start come from least squares.
fn starts(fam: LmFamily, s: &Samples, domain: DomainConvention) -> Vec<DVector<f64>> {
    let sq = |v: f64| match domain {
        DomainConvention::Unit => v,
        DomainConvention::Bins => v * 255.0 * 255.0,
    };
    let r2: Vec<f64> = s.x.iter().zip(&s.y).map(|(x, y)| x * x + y * y).collect();
    let ones = vec![1.0; s.len()];
    let mut out = Vec::new();
    match fam {
        LmFamily::Model1 => {
            for (a, b) in [(3.66, 0.58), (8.37, 0.53), (1.0, 1.0), (0.3, 0.5), (20.0, 0.4)] {
                let nl: Vec<f64> = s
                    .x
                    .iter()
                    .zip(&s.y)
                    .map(|(x, y)| 2.0 * a * ((-(pow_abs(*x, b) + pow_abs(*y, b)) / a).exp() - 1.0))
                    .collect();
                let t: Vec<f64> = s.target.iter().zip(&nl).map(|(t, n)| t - n).collect();
                let (c, off) = match linear_lsq(&[r2.clone(), ones.clone()], &t) {
                    Some(v) => (v[0], v[1]),
                    None => (0.0, 0.0),
                };
                out.push(DVector::from_vec(vec![f64::ln(a), f64::ln(b), c, off]));
            }
        }
        LmFamily::Model2 => {
            for b in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
                let b = sq(b);
                let t: Vec<f64> = s.target.iter().zip(&r2).map(|(t, r)| t + (b + r).ln()).collect();
                let (a, c) = match linear_lsq(&[r2.iter().map(|r| -r).collect(), ones.clone()], &t) {
                    Some(v) => (v[0], v[1]),
                    None => (1.0, 0.0),
                };
                let a = if a > 0.0 { a } else { 1e-6 / sq(1.0) };
                out.push(DVector::from_vec(vec![a.ln(), b.ln(), c]));
            }
        }
        LmFamily::HyperLap => {
            for b in [0.5, 0.8, 1.0, 1.5, 1.9] {
                let sb: Vec<f64> = s.x.iter().zip(&s.y).map(|(x, y)| -(pow_abs(*x, b) + pow_abs(*y, b))).collect();
                let (a, c) = match linear_lsq(&[sb, ones.clone()], &s.target) {
                    Some(v) => (v[0], v[1]),
                    None => (1.0, 0.0),
                };
                let a = if a > 0.0 { a } else { 1e-6 };
                out.push(DVector::from_vec(vec![a.ln(), logit(b / 2.0), c]));
            }
        }
    }
    out
}

fn fit_lm(fam: LmFamily, s: &Samples, domain: DomainConvention) -> (ModelParams, f64, f64, usize, bool) {
    let mut best: Option<(ModelParams, f64, f64, usize, bool)> = None;
    for z0 in starts(fam, s, domain) {
        let problem = LmProblem { fam, s, z: z0 };
        let (problem, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
        let sse = problem.sse();
        if !sse.is_finite() {
            continue;
        }
        let (params, off) = problem.params();
        if params.validate().is_err() {
            continue;
        }
        let converged = report.termination.was_successful();
        if best.as_ref().map_or(true, |b| sse < b.2) {
            best = Some((params, off, sse, report.number_of_evaluations, converged));
        }
    }
    best.unwrap_or_else(|| {
        let problem = LmProblem { fam, s, z: starts(fam, s, domain).remove(0) };
        let (params, off) = problem.params();
        (params, off, problem.sse(), 0, false)
    })
}

/// Fits a family to the log of the empirical probabilities over nonzero bins.
pub fn fit(input: FitInput<'_>, family: Family, domain: DomainConvention) -> Result<FitReport> {
    let s = Samples::collect(input, domain);
    if s.len() < 10 {
        return Err(GdpError::Input(format!("fit needs at least 10 nonzero bins, got {}", s.len())));
    }
    let sst = s.sst();
    let (params, log_offset, sse, iterations, converged) = match family {
        Family::Model1 => fit_lm(LmFamily::Model1, &s, domain),
        Family::Model2 => fit_lm(LmFamily::Model2, &s, domain),
        Family::HyperLap => fit_lm(LmFamily::HyperLap, &s, domain),
        Family::Laplace | Family::Gauss => {
            let b = if family == Family::Laplace { 1.0 } else { 2.0 };
            let basis: Vec<f64> = s.x.iter().zip(&s.y).map(|(x, y)| -(pow_abs(*x, b) + pow_abs(*y, b))).collect();
            let coef = linear_lsq(&[basis.clone(), vec![1.0; s.len()]], &s.target)
                .ok_or_else(|| GdpError::Numeric("baseline least squares failed".into()))?;
            let (mut a0, mut c0) = (coef[0], coef[1]);
            if a0 < 0.0 {
                a0 = 0.0;
                c0 = s.target.iter().sum::<f64>() / s.len() as f64;
            }
            let sse = basis.iter().zip(&s.target).map(|(bv, t)| (a0 * bv + c0 - t).powi(2)).sum();
            let params =
                if family == Family::Laplace { ModelParams::Laplace { a0, c0 } } else { ModelParams::Gauss { a0, c0 } };
            (params, 0.0, sse, 1, true)
        }
        Family::CdfModel => {
            let marg = match input {
                FitInput::Marginal(m) => m.clone(),
                FitInput::Hist(h) => mean_marginal(h),
            };
            let f = fit_t_cdf(&marg, domain)?;
            return Ok(FitReport {
                family,
                dims: s.dims,
                params: ModelParams::CdfModel { t: f.t },
                log_offset: f.log_scale,
                sse: f.sse,
                r2: f.r2,
                iterations: 1,
                converged: true,
                n_points: f.n_points,
                domain_convention: domain,
            });
        }
    };
    Ok(FitReport {
        family,
        dims: s.dims,
        params,
        log_offset,
        sse,
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 0.0 },
        iterations,
        converged,
        n_points: s.len(),
        domain_convention: domain,
    })
}

/// Discretizes a 2D model on the bin grid and renormalizes it.
pub fn model_histogram(m: &ModelParams, domain: DomainConvention) -> Result<GradHist2D> {
    m.validate()?;
    let mut logp = Vec::with_capacity(NBINS * NBINS);
    for v in -BIN_MAX..=BIN_MAX {
        for u in -BIN_MAX..=BIN_MAX {
            let l = eval_log_pdf(m, &[domain.coord(u), domain.coord(v)])?;
            logp.push(l);
        }
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GdpError::Numeric("model log-density is not finite on the grid".into()));
    }
    let w: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    GradHist2D::from_weights(w).map_err(|_| GdpError::Numeric("model mass underflows on the grid".into()))
}

/// Entropy (nats) of the discretized, renormalized 2D model.
pub fn model_entropy(m: &ModelParams, domain: DomainConvention) -> Result<f64> {
    let h = model_histogram(m, domain)?;
    Ok(entropy_of(h.bins()))
}

/// Published parameters of the 2D models fitted to a large natural-image corpus.
pub mod reference {
    use super::ModelParams;

    pub const MODEL1_2D_ALL: ModelParams = ModelParams::Model1 { a1: 8.37, b1: 0.53, c1: -6.3e-5 };
    pub const MODEL2_2D_ALL: ModelParams = ModelParams::Model2 { a2: 6.21e-5, b2: 2.39e-2, c2: -5.24 };
    pub const MODEL1_1D_SET1_X: ModelParams = ModelParams::Model1 { a1: 3.66, b1: 0.58, c1: -2.4e-4 };
    pub const T_ALL: f64 = 0.46;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_pdf_at_origin() {
        let m2 = ModelParams::Model2 { a2: 0.0, b2: 1.0, c2: 0.0 };
        assert_eq!(eval_log_pdf(&m2, &[0.0]).unwrap(), 0.0);
        let m1 = ModelParams::Model1 { a1: 1.0, b1: 1.0, c1: 0.0 };
        assert_eq!(eval_log_pdf(&m1, &[0.0]).unwrap(), 0.0);
        let sing = ModelParams::Model2 { a2: 1.0, b2: 0.0, c2: 0.0 };
        assert!(matches!(eval_log_pdf(&sing, &[0.0]), Err(GdpError::Singularity(_))));
    }

    #[test]
    fn model2_hand_value() {
        let m = ModelParams::Model2 { a2: 1e-4, b2: 5.4, c2: -0.266 };
        let want = -0.01 - 105.4f64.ln() - 0.266;
        assert!((eval_log_pdf(&m, &[10.0]).unwrap() - want).abs() < 1e-12);
        assert!((eval_log_pdf(&m, &[6.0, 8.0]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cdf_symmetry_and_derivative() {
        let t = 0.46;
        for g in [0.01, 0.3, 1.0, 4.0] {
            assert!((cdf_model_raw(t, g) + cdf_model_raw(t, -g) - 1.0).abs() < 1e-12);
            let h = 1e-6 * g;
            let d = (cdf_model_raw(t, g + h) - cdf_model_raw(t, g - h)) / (2.0 * h);
            let pdf = (-(t * g).powi(2)).exp() / (g * g);
            assert!((d - pdf).abs() < 1e-5 * pdf.max(1.0), "{g}: {d} vs {pdf}");
        }
        assert!((eval_cdf_model(t, 1e9).unwrap() - 1.0).abs() < 1e-9);
        assert!(eval_cdf_model(0.7, 1.0).is_err());
    }

    #[test]
    fn closed_form_t_exact_and_scale() {
        let t0 = 3.0;
        let m = Marginal1D::from_fn(|k| {
            let g = k as f64 / 255.0;
            if k == 0 { 50.0 } else { (-(t0 * g).powi(2)).exp() / (g * g) }
        })
        .unwrap();
        let t = fit_t_closed_form(&m, DomainConvention::Unit).unwrap();
        assert!((t - t0).abs() < 1e-9 * t0);
        let tb = fit_t_closed_form(&m, DomainConvention::Bins).unwrap();
        assert!((tb * 255.0 - t0).abs() < 1e-9);
    }

    #[test]
    fn cdf_tail_recovers_model_t() {
        for t0 in [0.8, 3.0, 9.0] {
            let m = Marginal1D::from_fn(|k| {
                let g = k as f64 / 255.0;
                if k == 0 { 10.0 } else { (-(t0 * g).powi(2)).exp() / (g * g) }
            })
            .unwrap();
            let f = fit_t_cdf(&m, DomainConvention::Unit).unwrap();
            assert!((f.t / t0 - 1.0).abs() < 1e-6, "{t0}: {}", f.t);
            assert!(f.r2 > 0.999_999);
            let b = fit_t_cdf(&m, DomainConvention::Bins).unwrap();
            assert!((b.t * 255.0 / t0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn anchored_is_the_offset_free_closed_form() {
        let m = Marginal1D::from_fn(|k| (-(k as f64).abs() / 20.0).exp()).unwrap();
        let t = fit_t_anchored(&m, DomainConvention::Unit).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in -255i32..=255 {
            if k != 0 {
                let g = k as f64 / 255.0;
                num += (m.get(k).ln() + 2.0 * g.abs().ln()) * g * g;
                den += g.powi(4);
            }
        }
        assert!((t * t + num / den).abs() < 1e-9 * t * t);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| (x - 1.234).powi(2), -5.0, 7.0, 1e-12);
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn closed_form_rejects_degenerate() {
        let delta = Marginal1D::from_fn(|k| if k == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(matches!(fit_t_closed_form(&delta, DomainConvention::Unit), Err(GdpError::Estimation(_))));
        let rising = Marginal1D::from_fn(|k| ((k as f64) / 50.0).powi(2).exp()).unwrap();
        assert!(matches!(fit_t_closed_form(&rising, DomainConvention::Unit), Err(GdpError::Estimation(_))));
    }

    #[test]
    fn model2_round_trip_bins() {
        let (a2, b2, c2) = (2e-4, 5.0, -3.0);
        let truth = ModelParams::Model2 { a2, b2, c2 };
        let m = Marginal1D::from_fn(|k| eval_log_pdf(&truth, &[k as f64]).unwrap().exp()).unwrap();
        let r = fit(FitInput::Marginal(&m), Family::Model2, DomainConvention::Bins).unwrap();
        let ModelParams::Model2 { a2: fa, b2: fb, .. } = r.params else { panic!() };
        assert!((fa / a2 - 1.0).abs() < 0.02, "a2 {fa}");
        assert!((fb / b2 - 1.0).abs() < 0.02, "b2 {fb}");
        assert!(r.r2 > 0.999);
    }

    #[test]
    fn gauss_on_heavy_tails_has_poor_r2() {
        let m = Marginal1D::from_fn(|k| 1.0 / (1.0 + (k as f64).abs()).powi(3)).unwrap();
        let g = fit(FitInput::Marginal(&m), Family::Gauss, DomainConvention::Bins).unwrap();
        let m2 = fit(FitInput::Marginal(&m), Family::Model2, DomainConvention::Bins).unwrap();
        assert!(g.r2 < 0.9 && m2.r2 > g.r2);
    }

    #[test]
    fn entropy_limits() {
        let sharp = ModelParams::Model2 { a2: 1e4, b2: 1e-3, c2: 0.0 };
        assert!(model_entropy(&sharp, DomainConvention::Bins).unwrap() < 1e-3);
        let flat = ModelParams::Gauss { a0: 0.0, c0: 0.0 };
        let e = model_entropy(&flat, DomainConvention::Bins).unwrap();
        assert!((e - ((NBINS * NBINS) as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn report_json_shape() {
        let m = Marginal1D::from_fn(|k| (-(k as f64).abs() / 10.0).exp()).unwrap();
        let r = fit(FitInput::Marginal(&m), Family::Laplace, DomainConvention::Unit).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["family"], "laplace");
        assert_eq!(v["params"]["family"], "laplace");
        assert_eq!(v["domain_convention"], "unit");
        assert!(r.r2 > 0.999_999);
    }
}
