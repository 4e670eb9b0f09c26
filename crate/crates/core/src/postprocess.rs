//! Stage D: ringing suppression against the pre-deblur image, then a global
//! percentile contrast stretch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{clamp_unit, GrayImage};

/// Envelope radius used when no deblur PSF radius is known (33-tap kernel).
pub const DEFAULT_RINGING_RADIUS: usize = 16;
/// Below this percentile spread the stretch is skipped.
const MIN_STRETCH_RANGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub stretch_low_percentile: f64,
    pub stretch_high_percentile: f64,
    pub ringing_guide_blend: f64,
    pub enable_stretch: bool,
    pub enable_ringing: bool,
    /// Envelope window radius; `None` follows the deblur PSF radius.
    pub ringing_radius: Option<usize>,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            stretch_low_percentile: 1.0,
            stretch_high_percentile: 99.0,
            ringing_guide_blend: 1.0,
            enable_stretch: true,
            enable_ringing: true,
            ringing_radius: None,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.stretch_low_percentile, self.stretch_high_percentile);
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::invalid(format!(
                "stretch percentiles must satisfy 0 <= low < high <= 100, got {lo}/{hi}"
            )));
        }
        if !(0.0..=1.0).contains(&self.ringing_guide_blend) {
            return Err(Error::invalid("ringing_guide_blend must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, pct)
}

fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `v -> clamp((v - p_low) / (p_high - p_low), 0, 1)`.
pub fn contrast_stretch(img: &GrayImage, low_pct: f64, high_pct: f64) -> Result<GrayImage> {
    if !(0.0 <= low_pct && low_pct < high_pct && high_pct <= 100.0) {
        return Err(Error::invalid(format!(
            "invalid percentile order {low_pct}/{high_pct}"
        )));
    }
    let mut sorted = img.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let p_lo = percentile_sorted(&sorted, low_pct);
    let p_hi = percentile_sorted(&sorted, high_pct);
    let range = p_hi - p_lo;
    if !(range >= MIN_STRETCH_RANGE) {
        return Ok(img.clone());
    }
    Ok(img.map(|v| ((v - p_lo) / range).clamp(0.0, 1.0)))
}

/// Sliding extremum over `[i - r, i + r]` truncated to the slice, via a
/// monotonic deque. `better(a, b)` is true when `a` should evict `b`.
#[allow(clippy::needless_range_loop)]
fn sliding_extremum(src: &[f64], r: usize, better: impl Fn(f64, f64) -> bool, out: &mut [f64]) {
    let n = src.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + r).min(n - 1);
        while next <= hi {
            while let Some(&b) = dq.back() {
                if better(src[next], src[b]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(r);
        while let Some(&f) = dq.front() {
            if f < lo {
                dq.pop_front();
            } else {
                break;
            }
        }
        out[i] = src[*dq.front().unwrap()];
    }
}

fn window_extremum(
    img: &GrayImage,
    r: usize,
    better: impl Fn(f64, f64) -> bool + Copy,
) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        sliding_extremum(
            &img.data()[y * w..(y + 1) * w],
            r,
            better,
            &mut rows[y * w..(y + 1) * w],
        );
    }
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        sliding_extremum(&col, r, better, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}

/// Local `(min, max)` of the image over `(2r+1)^2` windows.
pub fn local_envelope(img: &GrayImage, radius: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = window_extremum(img, radius, |a, b| a <= b);
    let hi = window_extremum(img, radius, |a, b| a >= b);
    (lo, hi)
}

/// Pulls deblurred samples that overshoot the guide's local envelope back
/// toward it: `v - blend * (max(0, v - M) + min(0, v - m))`.
pub fn suppress_ringing(
    deblurred: &GrayImage,
    guide: &GrayImage,
    blend: f64,
    radius: usize,
) -> Result<GrayImage> {
    guide.same_shape(deblurred)?;
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::invalid("blend must be in [0, 1]"));
    }
    let (lo, hi) = local_envelope(guide, radius);
    let data = deblurred
        .data()
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(&v, (&m, &big_m))| {
            let over = (v - big_m).max(0.0) + (v - m).min(0.0);
            v - blend * over
        })
        .collect();
    GrayImage::new(deblurred.width(), deblurred.height(), data)
}

/// Ringing suppression, then contrast stretch, then a final clamp.
pub fn postprocess(
    img: &GrayImage,
    guide: &GrayImage,
    params: &PostprocessParams,
) -> Result<GrayImage> {
    params.validate()?;
    guide.same_shape(img)?;
    let mut out = img.clone();
    if params.enable_ringing {
        let r = params.ringing_radius.unwrap_or(DEFAULT_RINGING_RADIUS);
        out = suppress_ringing(&out, guide, params.ringing_guide_blend, r)?;
    }
    if params.enable_stretch {
        out = contrast_stretch(
            &out,
            params.stretch_low_percentile,
            params.stretch_high_percentile,
        )?;
    }
    Ok(out.map(clamp_unit))
}
