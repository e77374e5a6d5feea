//! Grayscale images, forward-difference gradients, convolution and the
//! synthetic degradations used throughout the crate.
//!
//! Intensities live in `[0, 1]`. Nothing here clamps except [`save_image`].

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GdpError, Result};

/// Row-major grayscale image with `f64` intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GdpError::Dimension(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(GdpError::Dimension(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GdpError::Input("non-finite pixel value".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped to the image (replicate border).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_size(&self, other: &Image) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(GdpError::Dimension(format!(
                "size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(self.same_size(other), "zip_map on mismatched sizes");
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn rms_diff(&self, other: &Image) -> f64 {
        let ss: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        (ss / self.data.len() as f64).sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sub-image `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// Forward-difference gradient field. Entries on the last column of `gx` and
/// the last row of `gy` are zero and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField {
    pub fn new(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(GdpError::Dimension("gradient component size mismatch".into()));
        }
        let mut g = Self { width, height, gx, gy };
        g.zero_masked();
        Ok(g)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, gx: vec![0.0; width * height], gy: vec![0.0; width * height] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn gx_valid(&self, x: usize, _y: usize) -> bool {
        x + 1 < self.width
    }

    #[inline]
    pub fn gy_valid(&self, _x: usize, y: usize) -> bool {
        y + 1 < self.height
    }

    /// Pixels where both components come from a full forward difference.
    #[inline]
    pub fn both_valid(&self, x: usize, y: usize) -> bool {
        x + 1 < self.width && y + 1 < self.height
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.both_valid(x, y))
            .collect()
    }

    pub fn zero_masked(&mut self) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            self.gx[y * w + w - 1] = 0.0;
        }
        for x in 0..w {
            self.gy[(h - 1) * w + x] = 0.0;
        }
    }

    pub fn scaled(&self, alpha: f64) -> GradientField {
        GradientField {
            width: self.width,
            height: self.height,
            gx: self.gx.iter().map(|v| v * alpha).collect(),
            gy: self.gy.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        self.gx.iter().zip(&other.gx).map(|(a, b)| a * b).sum::<f64>()
            + self.gy.iter().zip(&other.gy).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Discrete curl `∂x gy − ∂y gx` on the interior; zero for integrable fields.
    pub fn curl_rms(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        if w < 3 || h < 3 {
            return 0.0;
        }
        let mut ss = 0.0;
        let mut n = 0usize;
        for y in 0..h - 2 {
            for x in 0..w - 2 {
                let i = y * w + x;
                let c = (self.gy[i + 1] - self.gy[i]) - (self.gx[i + w] - self.gx[i]);
                ss += c * c;
                n += 1;
            }
        }
        (ss / n as f64).sqrt()
    }
}

/// Odd-sized nonnegative convolution kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel and normalizes it to unit sum.
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(GdpError::Dimension(format!("kernel size {width}x{height} must be odd")));
        }
        if weights.len() != width * height {
            return Err(GdpError::Dimension("kernel weight count mismatch".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(GdpError::Input("kernel weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(GdpError::Input("kernel has zero mass".into()));
        }
        Ok(Self { width, height, weights: weights.into_iter().map(|w| w / sum).collect() })
    }

    pub fn identity(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let mut weights = vec![0.0; size * size];
        weights[size * size / 2] = 1.0;
        Self { width: size, height: size, weights }
    }

    pub fn boxed(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let n = (size * size) as f64;
        Self { width: size, height: size, weights: vec![1.0 / n; size * size] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn rx(&self) -> usize {
        self.width / 2
    }

    #[inline]
    pub fn ry(&self) -> usize {
        self.height / 2
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.width + i]
    }

    /// Kernel rotated by 180°, the adjoint of convolution.
    pub fn flipped(&self) -> Kernel {
        Kernel {
            width: self.width,
            height: self.height,
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    pub fn center_weight(&self) -> f64 {
        self.get(self.rx(), self.ry())
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.weights.clone() }
    }
}

/// Border treatment for [`convolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMode {
    /// Only pixels whose full kernel support lies inside the image are
    /// convolved; the margin is copied from the input.
    #[default]
    Interior,
    ZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GdpError {
    GdpError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}

/// Loads an 8-bit PGM or PNG, converting color to luma with 0.299/0.587/0.114.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| GdpError::Io { path: path.to_path_buf(), source })?;
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| io_err(path, e))?;
    let dynimg = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => GdpError::Format(u.to_string()),
        other => GdpError::Format(other.to_string()),
    })?;
    from_dynamic(&dynimg)
}

fn from_dynamic(img: &DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img.color() {
        ColorType::L8 | ColorType::La8 => {
            img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        ColorType::Rgb8 | ColorType::Rgba8 => img
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
            })
            .collect(),
        other => return Err(GdpError::Format(format!("unsupported pixel type {other:?}; only 8-bit images"))),
    };
    Image::new(w, h, data)
}

/// Writes `round(clamp(v,0,1)*255)` as PNG or binary PGM, chosen by extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let gray = GrayImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| GdpError::Dimension("buffer size".into()))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    let format = match ext.as_deref() {
        Some("png") => image::ImageFormat::Png,
        Some("pgm") | Some("pnm") => image::ImageFormat::Pnm,
        other => return Err(GdpError::Format(format!("cannot write extension {other:?}; use .png or .pgm"))),
    };
    gray.save_with_format(path, format).map_err(|e| io_err(path, e))
}

fn require_min_dims(img: &Image, min: usize) -> Result<()> {
    if img.width < min || img.height < min {
        return Err(GdpError::Dimension(format!(
            "image {}x{} smaller than {min}x{min}",
            img.width, img.height
        )));
    }
    Ok(())
}

/// Forward differences `(I(x+1,y)-I(x,y), I(x,y+1)-I(x,y))`.
pub fn gradient(img: &Image) -> Result<GradientField> {
    require_min_dims(img, 2)?;
    let (w, h) = (img.width, img.height);
    let d = &img.data;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                gx[i] = d[i + 1] - d[i];
            }
            if y + 1 < h {
                gy[i] = d[i + w] - d[i];
            }
        }
    }
    Ok(GradientField { width: w, height: h, gx, gy })
}

/// Backward-difference divergence, the negative adjoint of [`gradient`].
pub fn divergence(g: &GradientField) -> Image {
    let (w, h) = (g.width, g.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if x + 1 < w {
                v += g.gx[i];
            }
            if x > 0 {
                v -= g.gx[i - 1];
            }
            if y + 1 < h {
                v += g.gy[i];
            }
            if y > 0 {
                v -= g.gy[i - w];
            }
            out[i] = v;
        }
    }
    Image { width: w, height: h, data: out }
}

/// Five-point Laplacian with Neumann (reflecting) borders; equals
/// `divergence(gradient(img))`.
pub fn laplacian(img: &Image) -> Image {
    let (w, h) = (img.width, img.height);
    let d = &img.data;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let c = d[i];
            let mut v = 0.0;
            if x > 0 {
                v += d[i - 1] - c;
            }
            if x + 1 < w {
                v += d[i + 1] - c;
            }
            if y > 0 {
                v += d[i - w] - c;
            }
            if y + 1 < h {
                v += d[i + w] - c;
            }
            out[i] = v;
        }
    }
    Image { width: w, height: h, data: out }
}

/// Central-difference squared gradient magnitude with replicated borders.
pub fn central_grad_sq(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in 0..w {
            let gx = 0.5 * (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y));
            let gy = 0.5 * (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1));
            out.push(gx * gx + gy * gy);
        }
    }
    out
}

/// 2D convolution `out(x) = Σ k(j) img(x − j)` with the kernel centered.
pub fn convolve(img: &Image, k: &Kernel, mode: ConvMode) -> Result<Image> {
    if k.width > img.width || k.height > img.height {
        return Err(GdpError::Dimension(format!(
            "kernel {}x{} larger than image {}x{}",
            k.width, k.height, img.width, img.height
        )));
    }
    let (w, h) = (img.width as isize, img.height as isize);
    let (rx, ry) = (k.rx() as isize, k.ry() as isize);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let interior = x >= rx && x < w - rx && y >= ry && y < h - ry;
            if mode == ConvMode::Interior && !interior {
                continue;
            }
            let mut acc = 0.0;
            for j in 0..k.height as isize {
                let sy = y - (j - ry);
                if sy < 0 || sy >= h {
                    continue;
                }
                for i in 0..k.width as isize {
                    let sx = x - (i - rx);
                    if sx < 0 || sx >= w {
                        continue;
                    }
                    acc += k.weights[(j * k.width as isize + i) as usize] * img.data[(sy * w + sx) as usize];
                }
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    Ok(out)
}

/// Sampled isotropic Gaussian of size `2·radius+1`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Kernel {
    assert!(sigma > 0.0 && radius >= 1, "gaussian_kernel needs sigma > 0, radius >= 1");
    let size = 2 * radius + 1;
    let r = radius as f64;
    let mut weights = Vec::with_capacity(size * size);
    for j in 0..size {
        for i in 0..size {
            let dx = i as f64 - r;
            let dy = j as f64 - r;
            weights.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    // exp of the center is 1, so the sum is never zero.
    Kernel::new(size, size, weights).expect("gaussian kernel is valid")
}

/// Adds i.i.d. `N(0, sigma²)` noise. Output is not clamped.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    assert!(sigma >= 0.0, "noise sigma must be nonnegative");
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Image {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v + normal.sample(&mut rng)).collect(),
    }
}

/// Resamples by `factor` (output size `round(n·factor)`), pixel-center aligned.
pub fn resample(img: &Image, factor: f64, method: ResampleMethod) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(GdpError::Input(format!("resample factor {factor} must be positive")));
    }
    let ow = (img.width as f64 * factor).round() as usize;
    let oh = (img.height as f64 * factor).round() as usize;
    resample_to(img, ow, oh, method)
}

/// Resamples to an explicit output size.
pub fn resample_to(img: &Image, ow: usize, oh: usize, method: ResampleMethod) -> Result<Image> {
    if ow < 2 || oh < 2 {
        return Err(GdpError::Dimension(format!("resampled size {ow}x{oh} below 2x2")));
    }
    if ow == img.width && oh == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / ow as f64;
    let sy = img.height as f64 / oh as f64;
    let out = match method {
        ResampleMethod::Nearest => Image::from_fn(ow, oh, |x, y| {
            let xs = (((x as f64 + 0.5) * sx).floor() as usize).min(img.width - 1);
            let ys = (((y as f64 + 0.5) * sy).floor() as usize).min(img.height - 1);
            img.get(xs, ys)
        }),
        ResampleMethod::Bilinear => Image::from_fn(ow, oh, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let y1 = (y0 + 1).min(img.height - 1);
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
            let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
            top * (1.0 - ty) + bottom * ty
        }),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, _| x as f64 / (w - 1) as f64)
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient(&Image::filled(5, 4, 0.3)).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let g = gradient(&ramp(4, 4)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let i = y * 4 + x;
                if g.gx_valid(x, y) {
                    assert!((g.gx[i] - 1.0 / 3.0).abs() < 1e-15);
                } else {
                    assert_eq!(g.gx[i], 0.0);
                }
                assert_eq!(g.gy[i], 0.0);
            }
        }
    }

    #[test]
    fn gradient_two_by_two() {
        let img = Image::new(2, 2, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        let g = gradient(&img).unwrap();
        assert!((g.gx[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.gy[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(!g.gx_valid(1, 0));
        assert!(!g.gy_valid(0, 1));
        assert_eq!(g.valid_mask(), vec![true, false, false, false]);
    }

    #[test]
    fn gradient_rejects_degenerate() {
        assert!(matches!(gradient(&Image::filled(1, 5, 0.0)), Err(GdpError::Dimension(_))));
    }

    #[test]
    fn divergence_of_zero_and_ramp() {
        let z = divergence(&GradientField::zeros(4, 3));
        assert!(z.data().iter().all(|&v| v == 0.0));
        let lap = divergence(&gradient(&ramp(6, 5)).unwrap());
        for y in 0..5 {
            for x in 1..5 {
                assert!(lap.get(x, y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let img = Image::from_fn(7, 6, |x, y| ((x * 31 + y * 17) % 11) as f64 / 11.0);
        let a = divergence(&gradient(&img).unwrap());
        let b = laplacian(&img);
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn identity_and_box_convolution() {
        let img = Image::from_fn(9, 8, |x, y| (x * y) as f64 / 72.0);
        for mode in [ConvMode::Interior, ConvMode::ZeroPad] {
            let out = convolve(&img, &Kernel::identity(3), mode).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-15);
        }
        let c = convolve(&Image::filled(6, 6, 0.7), &Kernel::boxed(3), ConvMode::Interior).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn box_on_impulse_gives_plateau() {
        let mut img = Image::filled(7, 7, 0.0);
        img.set(3, 3, 1.0);
        let out = convolve(&img, &Kernel::boxed(3), ConvMode::ZeroPad).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let expect = if (2..=4).contains(&x) && (2..=4).contains(&y) { 1.0 / 9.0 } else { 0.0 };
                assert!((out.get(x, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interior_mode_keeps_margin() {
        let img = Image::from_fn(6, 6, |x, y| (x + 2 * y) as f64);
        let out = convolve(&img, &Kernel::boxed(3), ConvMode::Interior).unwrap();
        for i in 0..6 {
            assert_eq!(out.get(i, 0), img.get(i, 0));
            assert_eq!(out.get(0, i), img.get(0, i));
            assert_eq!(out.get(5, i), img.get(5, i));
        }
    }

    #[test]
    fn kernel_larger_than_image_rejected() {
        let r = convolve(&Image::filled(3, 3, 0.0), &Kernel::boxed(5), ConvMode::ZeroPad);
        assert!(matches!(r, Err(GdpError::Dimension(_))));
    }

    #[test]
    fn gaussian_kernel_properties() {
        assert!(gaussian_kernel(1e-3, 2).center_weight() > 0.999);
        let k = gaussian_kernel(1.0, 3);
        let direct: f64 = (-3..=3)
            .flat_map(|j| (-3..=3).map(move |i| (i, j)))
            .map(|(i, j): (i32, i32)| (-((i * i + j * j) as f64) / 2.0).exp())
            .sum();
        assert!((k.center_weight() - 1.0 / direct).abs() < 1e-14);
        for sigma in [0.5, 1.3, 2.7] {
            let k = gaussian_kernel(sigma, 4);
            let n = k.width();
            for j in 0..n {
                for i in 0..n {
                    // 90° rotation: (i, j) -> (n-1-j, i)
                    assert!((k.get(i, j) - k.get(n - 1 - j, i)).abs() < 1e-15);
                }
            }
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let img = Image::filled(1000, 1000, 0.5);
        assert_eq!(add_gaussian_noise(&img, 0.0, 7), img);
        let a = add_gaussian_noise(&img, 0.1, 42);
        let b = add_gaussian_noise(&img, 0.1, 42);
        assert_eq!(a, b);
        let m = a.mean();
        let var = a.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (a.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.0995..=0.1005).contains(&sd), "sd {sd}");
    }

    #[test]
    fn resample_cases() {
        let img = Image::from_fn(5, 4, |x, y| (x + y) as f64 / 8.0);
        assert_eq!(resample(&img, 1.0, ResampleMethod::Bilinear).unwrap(), img);
        let cb = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = resample(&cb, 2.0, ResampleMethod::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(x, y), cb.get(x / 2, y / 2));
            }
        }
        let smooth = Image::from_fn(64, 64, |x, y| 0.5 + 0.3 * ((x as f64) / 10.0).sin() * ((y as f64) / 13.0).cos());
        for f in [0.5, 2.0, 1.5] {
            let r = resample(&smooth, f, ResampleMethod::Bilinear).unwrap();
            assert!((r.mean() - smooth.mean()).abs() < 1e-3, "factor {f}");
        }
        assert!(matches!(resample(&img, 0.2, ResampleMethod::Nearest), Err(GdpError::Dimension(_))));
    }

    #[test]
    fn pgm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 1, vec![51.0 / 255.0, 102.0 / 255.0]).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert!((back.get(0, 0) - 0.2).abs() < 1e-15);
            assert!((back.get(1, 0) - 0.4).abs() < 1e-15);
        }
        let missing = load_image(dir.path().join("missing.pgm"));
        assert!(matches!(missing, Err(GdpError::Io { .. })));
    }

    #[test]
    fn raw_pgm_white_and_black() {
        let dir = tempfile::tempdir().unwrap();
        for (val, expect) in [(255u8, 1.0), (0u8, 0.0)] {
            let p = dir.path().join(format!("v{val}.pgm"));
            let mut bytes = b"P5\n3 2\n255\n".to_vec();
            bytes.extend(std::iter::repeat_n(val, 6));
            std::fs::write(&p, bytes).unwrap();
            let img = load_image(&p).unwrap();
            assert_eq!((img.width(), img.height()), (3, 2));
            assert!(img.data().iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend([0u8, 1, 2, 3]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_image(&p), Err(GdpError::Format(_))));
    }

    #[test]
    fn color_png_uses_luma_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let rgb = image::RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap();
        rgb.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
    }
}
