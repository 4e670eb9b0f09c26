//! Stage C: remove the residual blur of the fused image.
//!
//! The stage is a [`Deblurrer`]: image in, image out. The built-in
//! [`ClassicalDeblurrer`] runs Wiener or Richardson-Lucy deconvolution with a
//! Gaussian PSF that is either given or found by a grid search over candidate
//! widths that favors sparse gradients.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{kernel_spectrum, next_fast_len, Fft2d};
use crate::imgio::GrayImage;

/// Default PSF support, matching the simulator's kernel size.
pub const DEFAULT_PSF_SIZE: usize = 33;
/// Floor applied to `|H|^2` in the Wiener denominator.
const SPECTRUM_FLOOR: f64 = 1e-12;
/// Floor applied to the Richardson-Lucy input and its reblurred estimate.
const RL_FLOOR: f64 = 1e-6;

/// Odd-sized, nonnegative, centered blur kernel summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Psf {
    size: usize,
    weights: Vec<f64>,
}

impl Psf {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::invalid(format!("PSF size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::LengthMismatch {
                left: weights.len(),
                right: size * size,
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("PSF weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("PSF weights sum to {sum}, not 1")));
        }
        Ok(Self { size, weights })
    }

    /// Unit impulse of the given odd size.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[size * size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, kx: usize, ky: usize) -> f64 {
        self.weights[ky * self.size + kx]
    }

    pub fn center_weight(&self) -> f64 {
        self.get(self.radius(), self.radius())
    }

    /// Kernel rotated by 180 degrees.
    pub fn mirrored(&self) -> Psf {
        let mut w = self.weights.clone();
        w.reverse();
        Psf {
            size: self.size,
            weights: w,
        }
    }
}

/// Sampled isotropic Gaussian normalized to unit sum.
pub fn gaussian_psf(sigma: f64, size: usize) -> Result<Psf> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "PSF sigma must be positive, got {sigma}"
        )));
    }
    if size.is_multiple_of(2) {
        return Err(Error::invalid(format!("PSF size must be odd, got {size}")));
    }
    let r = (size / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let dx = (i % size) as f64 - r;
            let dy = (i / size) as f64 - r;
            (-(dx * dx + dy * dy) / denom).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    Psf::new(size, w)
}

/// Image extended by `pad` pixels on every side with edge replication,
/// embedded in a `fw x fh` complex buffer; `offset` is subtracted first.
fn replicate_padded(
    img: &GrayImage,
    pad: usize,
    fw: usize,
    fh: usize,
    offset: f64,
) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); fw * fh];
    let (w, h) = img.dims();
    for y in 0..h + 2 * pad {
        let sy = y as isize - pad as isize;
        for x in 0..w + 2 * pad {
            let sx = x as isize - pad as isize;
            buf[y * fw + x].re = img.get_clamped(sx, sy) - offset;
        }
    }
    buf
}

/// Scales the replicated border by a raised cosine that reaches zero at its
/// outer edge, so the zero fill joins it without a jump.
fn taper_extension(buf: &mut [Complex64], w: usize, h: usize, pad: usize, fw: usize) {
    if pad == 0 {
        return;
    }
    let weight = |i: usize, n: usize| -> f64 {
        let d = if i < pad {
            pad - i
        } else if i >= pad + n {
            i + 1 - pad - n
        } else {
            0
        };
        0.5 * (1.0 + (std::f64::consts::PI * d as f64 / (pad + 1) as f64).cos())
    };
    let wx: Vec<f64> = (0..w + 2 * pad).map(|x| weight(x, w)).collect();
    for y in 0..h + 2 * pad {
        let wy = weight(y, h);
        for (x, &k) in wx.iter().enumerate() {
            buf[y * fw + x].re *= wy * k;
        }
    }
}

fn crop_real(
    buf: &[Complex64],
    fw: usize,
    pad: usize,
    w: usize,
    h: usize,
    offset: f64,
) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| buf[(y + pad) * fw + x + pad].re + offset)
}

fn check_psf_fits(img: &GrayImage, psf: &Psf) -> Result<()> {
    if psf.size() > img.width() || psf.size() > img.height() {
        return Err(Error::invalid(format!(
            "PSF of size {} is larger than the {}x{} image",
            psf.size(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Replicate-padded FFT convolution with a fixed kernel and image shape.
struct Convolver {
    width: usize,
    height: usize,
    pad: usize,
    fw: usize,
    fh: usize,
    plan: Fft2d,
    spectrum: Vec<Complex64>,
}

impl Convolver {
    fn new(width: usize, height: usize, psf: &Psf) -> Self {
        let pad = psf.radius();
        let fw = next_fast_len(width + 2 * pad);
        let fh = next_fast_len(height + 2 * pad);
        let plan = Fft2d::new(fw, fh);
        let spectrum = kernel_spectrum(psf.weights(), psf.size(), fw, fh, &plan);
        Self {
            width,
            height,
            pad,
            fw,
            fh,
            plan,
            spectrum,
        }
    }

    /// Convolution with the kernel, or correlation (mirrored kernel) when
    /// `adjoint` is set.
    fn apply(&self, img: &GrayImage, adjoint: bool) -> GrayImage {
        let mut buf = replicate_padded(img, self.pad, self.fw, self.fh, 0.0);
        self.plan.forward(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.spectrum) {
            *b *= if adjoint { h.conj() } else { *h };
        }
        self.plan.inverse(&mut buf);
        crop_real(&buf, self.fw, self.pad, self.width, self.height, 0.0)
    }
}

/// 2-D convolution with edge-replicate padding. No clamping.
pub fn convolve(img: &GrayImage, psf: &Psf) -> Result<GrayImage> {
    check_psf_fits(img, psf)?;
    Ok(Convolver::new(img.width(), img.height(), psf).apply(img, false))
}

/// Frequency-domain Wiener filter `conj(H) G / (|H|^2 + nsr)`.
///
/// The image is extended by the PSF radius with edge replication, made
/// zero-mean and zero-padded to an efficient transform size. The mean is added
/// back afterwards. The result is not clamped.
pub fn wiener_deconvolve(img: &GrayImage, psf: &Psf, nsr: f64) -> Result<GrayImage> {
    if !(nsr >= 0.0) {
        return Err(Error::invalid(format!("nsr must be >= 0, got {nsr}")));
    }
    check_psf_fits(img, psf)?;
    let (w, h) = img.dims();
    let pad = psf.radius();
    let fw = next_fast_len(w + 2 * pad);
    let fh = next_fast_len(h + 2 * pad);
    let plan = Fft2d::new(fw, fh);
    let spectrum = kernel_spectrum(psf.weights(), psf.size(), fw, fh, &plan);
    let mean = img.mean();
    let mut buf = replicate_padded(img, pad, fw, fh, mean);
    taper_extension(&mut buf, w, h, pad, fw);
    plan.forward(&mut buf);
    for (g, hf) in buf.iter_mut().zip(&spectrum) {
        let denom = hf.norm_sqr().max(SPECTRUM_FLOOR) + nsr;
        *g = hf.conj() * *g / denom;
    }
    plan.inverse(&mut buf);
    Ok(crop_real(&buf, fw, pad, w, h, mean))
}

/// Multiplicative Richardson-Lucy iterations starting from the (floored)
/// observation. Output is nonnegative.
pub fn richardson_lucy(img: &GrayImage, psf: &Psf, iterations: usize) -> Result<GrayImage> {
    if iterations < 1 {
        return Err(Error::invalid("rl_iterations must be >= 1"));
    }
    check_psf_fits(img, psf)?;
    let observed = img.map(|v| {
        if v.is_nan() {
            RL_FLOOR
        } else {
            v.max(RL_FLOOR)
        }
    });
    let conv = Convolver::new(img.width(), img.height(), psf);
    let mut estimate = observed.clone();
    for _ in 0..iterations {
        let reblurred = conv.apply(&estimate, false);
        let ratio_data: Vec<f64> = observed
            .data()
            .iter()
            .zip(reblurred.data())
            .map(|(o, b)| o / b.max(RL_FLOOR))
            .collect();
        let ratio = GrayImage::new(img.width(), img.height(), ratio_data)?;
        let correction = conv.apply(&ratio, true);
        for (e, c) in estimate.data_mut().iter_mut().zip(correction.data()) {
            // FFT round-off can leave tiny negative values in the correction.
            *e *= c.max(0.0);
        }
    }
    Ok(estimate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeblurMethod {
    Wiener,
    RichardsonLucy,
}

impl std::str::FromStr for DeblurMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(Self::Wiener),
            "richardson_lucy" | "richardson-lucy" | "rl" => Ok(Self::RichardsonLucy),
            other => Err(Error::invalid(format!("unknown deblur method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurParams {
    pub method: DeblurMethod,
    pub nsr: f64,
    pub rl_iterations: usize,
    /// Candidate Gaussian widths for blind estimation.
    pub psf_sigma_grid: Vec<f64>,
    /// Fixed Gaussian width; skips blind estimation when set.
    pub psf_sigma: Option<f64>,
    pub psf_size: usize,
}

impl Default for DeblurParams {
    fn default() -> Self {
        Self {
            method: DeblurMethod::Wiener,
            nsr: 1e-3,
            rl_iterations: 30,
            psf_sigma_grid: default_sigma_grid(),
            psf_sigma: None,
            psf_size: DEFAULT_PSF_SIZE,
        }
    }
}

/// 0.5, 0.75, ..., 4.0
pub fn default_sigma_grid() -> Vec<f64> {
    (0..=14).map(|i| 0.5 + 0.25 * i as f64).collect()
}

impl DeblurParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nsr >= 0.0) {
            return Err(Error::invalid("nsr must be >= 0"));
        }
        if self.rl_iterations < 1 {
            return Err(Error::invalid("rl_iterations must be >= 1"));
        }
        if self.psf_sigma_grid.is_empty() {
            return Err(Error::invalid("psf_sigma_grid must not be empty"));
        }
        if self.psf_sigma_grid.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("psf_sigma_grid values must be positive"));
        }
        if let Some(s) = self.psf_sigma {
            if !(s > 0.0) {
                return Err(Error::invalid("psf_sigma must be positive"));
            }
        }
        if self.psf_size.is_multiple_of(2) {
            return Err(Error::invalid("psf_size must be odd"));
        }
        Ok(())
    }
}

/// Mean amount by which samples fall outside `[0, 1]`.
pub fn out_of_range_energy(img: &GrayImage) -> f64 {
    img.data()
        .iter()
        .map(|&v| (v - v.clamp(0.0, 1.0)).abs())
        .sum::<f64>()
        / img.len() as f64
}

/// Normalized gradient sparsity `mean(|gx| + |gy|) / rms(gx, gy)` over
/// interior pixels, using central differences. Blur and ringing both spread
/// gradient energy and raise it; a correctly deconvolved edge lowers it.
/// Returns 0 for images without gradients.
pub fn gradient_sparsity(img: &GrayImage) -> f64 {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let d = img.data();
    let (mut l1, mut l2) = (0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = d[y * w + x + 1] - d[y * w + x - 1];
            let gy = d[(y + 1) * w + x] - d[(y - 1) * w + x];
            l1 += gx.abs() + gy.abs();
            l2 += gx * gx + gy * gy;
        }
    }
    if l2 <= 0.0 {
        return 0.0;
    }
    let n = ((w - 2) * (h - 2)) as f64;
    (l1 / n) / (l2 / n).sqrt()
}

/// Grid search for the Gaussian width whose Wiener result has the lowest
/// [`gradient_sparsity`]. Ties resolve to the smaller width.
pub fn estimate_psf_blind(img: &GrayImage, params: &DeblurParams) -> Result<Psf> {
    let sigma = estimate_sigma_blind(img, params)?;
    gaussian_psf(sigma, params.psf_size)
}

/// Width selected by [`estimate_psf_blind`].
pub fn estimate_sigma_blind(img: &GrayImage, params: &DeblurParams) -> Result<f64> {
    if params.psf_sigma_grid.is_empty() {
        return Err(Error::invalid("psf_sigma_grid must not be empty"));
    }
    let scores = params
        .psf_sigma_grid
        .par_iter()
        .map(|&sigma| {
            let psf = gaussian_psf(sigma, params.psf_size)?;
            let out = wiener_deconvolve(img, &psf, params.nsr)?;
            Ok((sigma, gradient_sparsity(&out)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut best = scores[0];
    for &(sigma, score) in &scores[1..] {
        if score < best.1 || (score == best.1 && sigma < best.0) {
            best = (sigma, score);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Debug)]
pub struct Deblurred {
    pub image: GrayImage,
    /// Kernel the result was deconvolved with, if the method uses one.
    pub psf: Option<Psf>,
}

/// Single-image deblurring stage. A learned restoration model can implement
/// this in place of [`ClassicalDeblurrer`].
pub trait Deblurrer: Sync {
    fn deblur(&self, img: &GrayImage) -> Result<Deblurred>;
}

#[derive(Clone, Debug, Default)]
pub struct ClassicalDeblurrer {
    pub params: DeblurParams,
    /// Explicit kernel; overrides `psf_sigma` and blind estimation.
    pub psf: Option<Psf>,
}

impl Deblurrer for ClassicalDeblurrer {
    fn deblur(&self, img: &GrayImage) -> Result<Deblurred> {
        deblur(img, &self.params, self.psf.as_ref())
    }
}

/// Runs the configured deconvolution. The PSF comes from `psf`, else from
/// `params.psf_sigma`, else from blind estimation.
pub fn deblur(img: &GrayImage, params: &DeblurParams, psf: Option<&Psf>) -> Result<Deblurred> {
    params.validate()?;
    let psf = match (psf, params.psf_sigma) {
        (Some(p), _) => p.clone(),
        (None, Some(sigma)) => gaussian_psf(sigma, params.psf_size)?,
        (None, None) => estimate_psf_blind(img, params)?,
    };
    let image = match params.method {
        DeblurMethod::Wiener => wiener_deconvolve(img, &psf, params.nsr)?,
        DeblurMethod::RichardsonLucy => richardson_lucy(img, &psf, params.rl_iterations)?,
    };
    Ok(Deblurred {
        image,
        psf: Some(psf),
    })
}
