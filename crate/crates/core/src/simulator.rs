//! Synthetic turbulence: tiered parameter sampling, spatially correlated tilt
//! and a Gaussian long-exposure blur.
//!
//! This is a tilt + blur + noise approximation, not a wave-optics simulator.
//! Strength tiers, their probabilities and per-tier parameter ranges follow
//! the standard weak/medium/strong configuration:
//!
//! | tier   | p   | D (m)          | D/r0                | distance (m)   |
//! |--------|-----|----------------|---------------------|----------------|
//! | weak   | 0.5 | U(0.001,0.005) | {0.4, 0.8, 1.2, 1.5} | U(150,600)    |
//! | medium | 0.3 | U(0.04,0.1)    | {0.8, 1, 1.6}        | U(500,800)    |
//! | strong | 0.2 | U(0.1,0.2)     | {1.6, 2, 2.4}        | U(1000,1500)  |
//!
//! Every tier uses a 33-pixel kernel and a correlation value drawn from
//! {-1, -0.1, -0.5, -0.05}.
//!
//! D/r0 drives both degradations: tilt rms is `0.8 px * D/r0` and the PSF
//! sigma is `1.2 px * D/r0`, jittered per frame by `U(0.8, 1.2)`. The
//! correlation value sets the tilt correlation length
//! `L = ceil(|corr| * min(w, h) / 2)`. Distance is recorded but unused.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64. Frame `i`
//! of a sequence draws from its own stream (see [`SimRng::stream`]), so
//! output does not depend on thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::deblur::{convolve, gaussian_psf, Psf};
use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::imgio::{clamp_unit, FrameSequence, GrayImage};
use crate::registration::{warp, FlowField};

pub const KERNEL_SIZE: usize = 33;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;
pub const DEFAULT_FRAMES: usize = 100;
pub const PSF_SIGMA_PER_RATIO: f64 = 1.2;
pub const TILT_RMS_PER_RATIO: f64 = 0.8;
const PSF_JITTER: (f64, f64) = (0.8, 1.2);
pub const CORR_CHOICES: [f64; 4] = [-1.0, -0.1, -0.5, -0.05];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Medium,
    Strong,
}

impl Strength {
    pub const ALL: [Strength; 3] = [Strength::Weak, Strength::Medium, Strength::Strong];

    pub fn probability(self) -> f64 {
        match self {
            Strength::Weak => 0.5,
            Strength::Medium => 0.3,
            Strength::Strong => 0.2,
        }
    }

    pub fn aperture_range(self) -> (f64, f64) {
        match self {
            Strength::Weak => (0.001, 0.005),
            Strength::Medium => (0.04, 0.1),
            Strength::Strong => (0.1, 0.2),
        }
    }

    pub fn d_over_r0_choices(self) -> &'static [f64] {
        match self {
            Strength::Weak => &[0.4, 0.8, 1.2, 1.5],
            Strength::Medium => &[0.8, 1.0, 1.6],
            Strength::Strong => &[1.6, 2.0, 2.4],
        }
    }

    pub fn distance_range(self) -> (f64, f64) {
        match self {
            Strength::Weak => (150.0, 600.0),
            Strength::Medium => (500.0, 800.0),
            Strength::Strong => (1000.0, 1500.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strength::Weak => "weak",
            Strength::Medium => "medium",
            Strength::Strong => "strong",
        }
    }
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" | "low" => Ok(Strength::Weak),
            "medium" => Ok(Strength::Medium),
            "strong" | "high" => Ok(Strength::Strong),
            other => Err(Error::invalid(format!(
                "unknown turbulence strength '{other}'"
            ))),
        }
    }
}

/// One sampled configuration, shared by all frames of a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    pub strength: Strength,
    pub kernel_size: usize,
    /// Aperture diameter D in meters.
    pub aperture_d: f64,
    pub d_over_r0: f64,
    /// Propagation distance in meters (metadata only).
    pub distance: f64,
    pub corr: f64,
    pub noise_sigma: f64,
    pub psf_sigma_per_ratio: f64,
    pub tilt_rms_per_ratio: f64,
}

impl TurbulenceParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("kernel_size must be odd"));
        }
        if !(self.aperture_d > 0.0 && self.d_over_r0 > 0.0 && self.distance > 0.0) {
            return Err(Error::invalid("D, D/r0 and distance must be positive"));
        }
        if !(self.corr < 0.0) {
            return Err(Error::invalid("corr must be negative"));
        }
        if !(self.noise_sigma >= 0.0
            && self.psf_sigma_per_ratio >= 0.0
            && self.tilt_rms_per_ratio >= 0.0)
        {
            return Err(Error::invalid(
                "noise and calibration constants must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn psf_sigma(&self) -> f64 {
        self.psf_sigma_per_ratio * self.d_over_r0
    }

    pub fn tilt_rms(&self) -> f64 {
        self.tilt_rms_per_ratio * self.d_over_r0
    }

    /// Length in pixels of the tilt correlation kernel for a given frame size.
    pub fn correlation_length(&self, width: usize, height: usize) -> usize {
        correlation_length(self.corr, width, height)
    }
}

fn correlation_length(corr: f64, width: usize, height: usize) -> usize {
    ((corr.abs() * width.min(height) as f64 / 2.0).ceil() as usize).max(1)
}

/// Seeded xoshiro256++ stream.
#[derive(Clone, Debug)]
pub struct SimRng(Xoshiro256PlusPlus);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Independent stream `index` derived from `seed`:
    /// `new(splitmix64(seed + (index + 1) * 0x9E3779B97F4A7C15))`.
    pub fn stream(seed: u64, index: u64) -> Self {
        let mixed = splitmix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
        Self::new(mixed)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn unit(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn choose<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.0.random_range(0..items.len())]
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random::<u64>()
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Weak with p = 0.5, medium 0.3, strong 0.2.
pub fn sample_strength(rng: &mut SimRng) -> Strength {
    let u = rng.unit();
    if u < 0.5 {
        Strength::Weak
    } else if u < 0.8 {
        Strength::Medium
    } else {
        Strength::Strong
    }
}

pub fn sample_params(strength: Strength, rng: &mut SimRng) -> TurbulenceParams {
    let (d_lo, d_hi) = strength.aperture_range();
    let aperture_d = rng.uniform(d_lo, d_hi);
    let d_over_r0 = rng.choose(strength.d_over_r0_choices());
    let (z_lo, z_hi) = strength.distance_range();
    let distance = rng.uniform(z_lo, z_hi);
    let corr = rng.choose(&CORR_CHOICES);
    TurbulenceParams {
        strength,
        kernel_size: KERNEL_SIZE,
        aperture_d,
        d_over_r0,
        distance,
        corr,
        noise_sigma: DEFAULT_NOISE_SIGMA,
        psf_sigma_per_ratio: PSF_SIGMA_PER_RATIO,
        tilt_rms_per_ratio: TILT_RMS_PER_RATIO,
    }
}

/// Zero-mean random displacement field with per-component rms `rms`.
///
/// Two white Gaussian fields are filtered with a Gaussian of standard
/// deviation `L = ceil(|corr| * min(w, h) / 2)` pixels (periodic boundary,
/// applied in the frequency domain), centered, and rescaled to the exact
/// requested rms.
pub fn correlated_tilt_field(
    width: usize,
    height: usize,
    corr: f64,
    rms: f64,
    rng: &mut SimRng,
) -> Result<FlowField> {
    if !(rms >= 0.0) {
        return Err(Error::invalid("tilt rms must be >= 0"));
    }
    if rms == 0.0 {
        return Ok(FlowField::zeros(width, height));
    }
    let n = width * height;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| {
            let re = rng.normal();
            let im = rng.normal();
            Complex64::new(re, im)
        })
        .collect();
    let plan = Fft2d::new(width, height);
    plan.forward(&mut buf);
    let l = correlation_length(corr, width, height) as f64;
    let k = -2.0 * std::f64::consts::PI * std::f64::consts::PI * l * l;
    let freq = |i: usize, len: usize| {
        let s = if i <= len / 2 {
            i as f64
        } else {
            i as f64 - len as f64
        };
        s / len as f64
    };
    for y in 0..height {
        let fy = freq(y, height);
        for x in 0..width {
            let fx = freq(x, width);
            buf[y * width + x] *= (k * (fx * fx + fy * fy)).exp();
        }
    }
    plan.inverse(&mut buf);
    // The transfer function is real and even, so the real and imaginary
    // parts stay independent filtered fields.
    let mut dx: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mut dy: Vec<f64> = buf.iter().map(|c| c.im).collect();
    normalize_rms(&mut dx, rms);
    normalize_rms(&mut dy, rms);
    FlowField::new(width, height, dx, dy)
}

fn normalize_rms(v: &mut [f64], rms: f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let cur = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if cur > 0.0 {
        let s = rms / cur;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Gaussian kernel with `sigma = psf_sigma_per_ratio * D/r0`; a unit impulse
/// when that width is zero.
pub fn long_exposure_psf(params: &TurbulenceParams) -> Result<Psf> {
    psf_for_sigma(params.psf_sigma(), params.kernel_size)
}

fn psf_for_sigma(sigma: f64, size: usize) -> Result<Psf> {
    if sigma > 0.0 {
        gaussian_psf(sigma, size)
    } else {
        Psf::delta(size)
    }
}

/// One degraded frame and the tilt field that produced it.
pub fn degrade_frame_with_tilt(
    clean: &GrayImage,
    params: &TurbulenceParams,
    rng: &mut SimRng,
) -> Result<(GrayImage, FlowField)> {
    let (w, h) = clean.dims();
    let tilt = correlated_tilt_field(w, h, params.corr, params.tilt_rms(), rng)?;
    let warped = warp(clean, &tilt)?;
    let jitter = rng.uniform(PSF_JITTER.0, PSF_JITTER.1);
    let psf = psf_for_sigma(params.psf_sigma() * jitter, params.kernel_size)?;
    let mut frame = convolve(&warped, &psf)?;
    if params.noise_sigma > 0.0 {
        for v in frame.data_mut() {
            *v += params.noise_sigma * rng.normal();
        }
    }
    Ok((frame.map(clamp_unit), tilt))
}

/// Tilt warp, jittered long-exposure blur, additive noise, clamp.
pub fn degrade_frame(
    clean: &GrayImage,
    params: &TurbulenceParams,
    rng: &mut SimRng,
) -> Result<GrayImage> {
    degrade_frame_with_tilt(clean, params, rng).map(|(f, _)| f)
}

/// A degraded sequence with its ground truth.
#[derive(Clone, Debug)]
pub struct SimulatedSequence {
    pub frames: FrameSequence,
    pub tilts: Vec<FlowField>,
    pub params: TurbulenceParams,
    pub seed: u64,
}

/// Draws one parameter set from `seed` and degrades `n_frames` frames, each
/// from its own RNG stream.
pub fn degrade_sequence(
    clean: &GrayImage,
    strength: Strength,
    n_frames: usize,
    seed: u64,
) -> Result<SimulatedSequence> {
    let params = sample_params(strength, &mut SimRng::new(seed));
    degrade_sequence_with_params(clean, &params, n_frames, seed)
}

pub fn degrade_sequence_with_params(
    clean: &GrayImage,
    params: &TurbulenceParams,
    n_frames: usize,
    seed: u64,
) -> Result<SimulatedSequence> {
    if n_frames < 1 {
        return Err(Error::invalid("n_frames must be >= 1"));
    }
    let out: Vec<(GrayImage, FlowField)> = (0..n_frames)
        .into_par_iter()
        .map(|i| degrade_frame_with_tilt(clean, params, &mut SimRng::stream(seed, i as u64)))
        .collect::<Result<_>>()?;
    let (frames, tilts): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(SimulatedSequence {
        frames: FrameSequence::new(frames)?,
        tilts,
        params: params.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn strength_probabilities_match_table() {
        let p: Vec<f64> = Strength::ALL.iter().map(|s| s.probability()).collect();
        assert_eq!(p, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = SimRng::new(7);
        let mut b = SimRng::new(7);
        for _ in 0..100 {
            assert_eq!(sample_strength(&mut a), sample_strength(&mut b));
        }
        let s1 = SimRng::stream(7, 3).next_u64();
        let s2 = SimRng::stream(7, 3).next_u64();
        let s3 = SimRng::stream(7, 4).next_u64();
        assert_eq!(s1, s2);
        assert_ne!(s1, s3);
    }

    #[test]
    fn params_respect_tiers() {
        let mut rng = SimRng::new(11);
        for _ in 0..500 {
            let p = sample_params(Strength::Weak, &mut rng);
            assert!((0.001..=0.005).contains(&p.aperture_d));
            assert!([0.4, 0.8, 1.2, 1.5].contains(&p.d_over_r0));
            assert_eq!(p.kernel_size, 33);
            let p = sample_params(Strength::Strong, &mut rng);
            assert!((1000.0..=1500.0).contains(&p.distance));
            assert_eq!(p.kernel_size, 33);
            assert!(p.validate().is_ok());
        }
    }

    #[test]
    fn zero_rms_field_is_zero() {
        let f = correlated_tilt_field(32, 32, -0.5, 0.0, &mut SimRng::new(1)).unwrap();
        assert_eq!(f.max_magnitude(), 0.0);
    }

    #[test]
    fn field_rms_is_exact() {
        for corr in CORR_CHOICES {
            let f = correlated_tilt_field(64, 48, corr, 1.5, &mut SimRng::new(5)).unwrap();
            assert!((rms(f.dx()) - 1.5).abs() < 1e-9);
            assert!((rms(f.dy()) - 1.5).abs() < 1e-9);
            assert!(f.dx().iter().sum::<f64>().abs() < 1e-8);
        }
    }

    #[test]
    fn psf_width_is_linear_in_ratio() {
        let mut p = sample_params(Strength::Weak, &mut SimRng::new(2));
        p.d_over_r0 = 0.8;
        let a = p.psf_sigma();
        p.d_over_r0 = 1.6;
        assert!((p.psf_sigma() - 2.0 * a).abs() < 1e-12);
        let psf = long_exposure_psf(&p).unwrap();
        assert_eq!(psf.size(), 33);
        assert!((psf.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_turbulence_leaves_frame_clean() {
        let clean = GrayImage::from_fn(40, 40, |x, y| ((x / 5 + y / 5) % 2) as f64);
        let params = TurbulenceParams {
            strength: Strength::Weak,
            kernel_size: 33,
            aperture_d: 0.003,
            d_over_r0: 1.0,
            distance: 300.0,
            corr: -0.5,
            noise_sigma: 0.0,
            psf_sigma_per_ratio: 0.0,
            tilt_rms_per_ratio: 0.0,
        };
        let out = degrade_frame(&clean, &params, &mut SimRng::new(3)).unwrap();
        for (a, b) in out.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strength_parsing() {
        assert_eq!("weak".parse::<Strength>().unwrap(), Strength::Weak);
        assert_eq!("Strong".parse::<Strength>().unwrap(), Strength::Strong);
        assert!("extreme".parse::<Strength>().is_err());
    }
}
