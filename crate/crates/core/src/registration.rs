//! Stage A: dense optical-flow registration of every frame to a mean reference.
//!
//! Flow follows the backward-warp convention: `flow(x)` points from reference
//! coordinates into the moving frame, so the aligned frame is
//! `moving(x + flow(x))` sampled bilinearly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{central_gradient, downsample2, gaussian_blur, window_sum};
use crate::imgio::{clamp_unit, FrameSequence, GrayImage};

/// Weight of the `|flow|^2` penalty in the window-mean LK objective.
const TIKHONOV_EPS: f64 = 1e-4;
/// Per-level convergence threshold on the largest update, in pixels.
const UPDATE_TOL: f64 = 1e-3;
/// Coarsest pyramid level keeps at least this many pixels per side.
const MIN_LEVEL_SIZE: usize = 16;

/// Per-pixel displacement `(dx, dy)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    /// Constant displacement everywhere.
    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n {
            return Err(Error::LengthMismatch {
                left: dx.len().max(dy.len()),
                right: n,
            });
        }
        if !dx.iter().chain(&dy).all(|v| v.is_finite()) {
            return Err(Error::Numeric(
                "flow field has non-finite components".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Bilinear, edge-clamped sample of both components.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = sample_plane(&self.dx, self.width, self.height, x, y);
        let sy = sample_plane(&self.dy, self.width, self.height, x, y);
        (sx, sy)
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (a, b) = self.get(x, y);
        a.hypot(b)
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .sum::<f64>()
            / self.dx.len() as f64
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| v.is_finite())
    }

    /// Writes the debug raw format: `u32 width, u32 height`, then the dx and
    /// dy planes as `f32`, all little-endian.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(8 + 8 * self.dx.len());
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in self.dx.iter().chain(&self.dy) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let corrupt = |detail: &str| Error::CorruptImage {
            path: path.to_path_buf(),
            detail: detail.into(),
        };
        if bytes.len() < 8 {
            return Err(corrupt("truncated header"));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = width * height;
        if bytes.len() != 8 + 8 * n {
            return Err(corrupt("payload length does not match header"));
        }
        let plane = |k: usize| -> Vec<f64> {
            bytes[8 + 4 * k * n..8 + 4 * (k + 1) * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        };
        Self::new(width, height, plane(0), plane(1))
    }

    fn clamp_magnitude(&mut self, max: f64) {
        for (a, b) in self.dx.iter_mut().zip(self.dy.iter_mut()) {
            if !a.is_finite() || !b.is_finite() {
                *a = 0.0;
                *b = 0.0;
                continue;
            }
            let m = a.hypot(*b);
            if m > max {
                let s = max / m;
                *a *= s;
                *b *= s;
            }
        }
    }

    /// Resamples to a finer level of twice the resolution, scaling vectors by 2.
    fn upsample_to(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            let yc = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let xc = (x as f64 + 0.5) * sx - 0.5;
                let (a, b) = self.sample(xc, yc);
                dx.push(a / sx);
                dy.push(b / sy);
            }
        }
        Self {
            width,
            height,
            dx,
            dy,
        }
    }
}

fn sample_plane(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    let bot = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    pub window_radius: usize,
    pub smoothing_sigma: f64,
    /// Displacement clamp in pixels; `None` means `min(width, height) / 4`.
    pub max_displacement: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            iterations_per_level: 10,
            window_radius: 7,
            smoothing_sigma: 1.0,
            max_displacement: None,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::invalid("pyramid_levels must be >= 1"));
        }
        if self.window_radius < 1 {
            return Err(Error::invalid("window_radius must be >= 1"));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::invalid("smoothing_sigma must be >= 0"));
        }
        if let Some(m) = self.max_displacement {
            if !(m > 0.0) {
                return Err(Error::invalid("max_displacement must be positive"));
            }
        }
        Ok(())
    }
}

/// Flow plus a marker for inputs without usable texture.
#[derive(Clone, Debug)]
pub struct FlowEstimate {
    pub field: FlowField,
    pub low_texture: bool,
}

/// Dense motion estimator mapping reference coordinates into the moving frame.
pub trait FlowEstimator: Sync {
    fn estimate(&self, moving: &GrayImage, reference: &GrayImage) -> Result<FlowEstimate>;
}

/// Coarse-to-fine dense Lucas-Kanade.
#[derive(Clone, Debug, Default)]
pub struct LucasKanade {
    pub params: FlowParams,
}

impl LucasKanade {
    pub fn new(params: FlowParams) -> Self {
        Self { params }
    }
}

impl FlowEstimator for LucasKanade {
    fn estimate(&self, moving: &GrayImage, reference: &GrayImage) -> Result<FlowEstimate> {
        estimate_flow(moving, reference, &self.params)
    }
}

/// Per-pixel arithmetic mean of all frames.
pub fn build_reference(seq: &FrameSequence) -> Result<GrayImage> {
    mean_of(seq.frames())
}

pub(crate) fn mean_of<'a>(frames: impl IntoIterator<Item = &'a GrayImage>) -> Result<GrayImage> {
    let mut iter = frames.into_iter();
    let first = iter.next().ok_or(Error::EmptySequence)?;
    let mut acc = first.data().to_vec();
    let mut count = 1usize;
    for frame in iter {
        first.same_shape(frame)?;
        for (a, v) in acc.iter_mut().zip(frame.data()) {
            *a += v;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    GrayImage::new(first.width(), first.height(), acc)
}

/// Backward warp: `out(x, y) = img(x + dx, y + dy)`, bilinear with edge clamp,
/// clamped to `[0, 1]`.
pub fn warp(img: &GrayImage, flow: &FlowField) -> Result<GrayImage> {
    if img.dims() != flow.dims() {
        return Err(Error::ShapeMismatch {
            expected: img.dims(),
            found: flow.dims(),
        });
    }
    Ok(warp_unclamped(img, flow).map(clamp_unit))
}

pub(crate) fn warp_unclamped(img: &GrayImage, flow: &FlowField) -> GrayImage {
    let (w, _) = img.dims();
    let mut i = 0;
    GrayImage::from_fn(w, img.height(), |x, y| {
        let v = img.sample_bilinear(x as f64 + flow.dx[i], y as f64 + flow.dy[i]);
        i += 1;
        v
    })
}

fn pyramid(img: &GrayImage, levels: usize) -> Vec<GrayImage> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.width().min(last.height()) / 2 < MIN_LEVEL_SIZE {
            break;
        }
        out.push(downsample2(last));
    }
    out
}

/// Dense pyramidal Lucas-Kanade flow from `reference` into `moving`.
pub fn estimate_flow(
    moving: &GrayImage,
    reference: &GrayImage,
    params: &FlowParams,
) -> Result<FlowEstimate> {
    reference.same_shape(moving)?;
    params.validate()?;
    let (w, h) = reference.dims();
    let max_disp = params
        .max_displacement
        .unwrap_or((w.min(h) as f64 / 4.0).max(1.0));

    let is_flat = |img: &GrayImage| {
        let (lo, hi) = img.min_max();
        hi - lo < 1e-12
    };
    if is_flat(moving) || is_flat(reference) {
        return Ok(FlowEstimate {
            field: FlowField::zeros(w, h),
            low_texture: true,
        });
    }

    let mov = gaussian_blur(moving, params.smoothing_sigma);
    let refi = gaussian_blur(reference, params.smoothing_sigma);
    let mov_pyr = pyramid(&mov, params.pyramid_levels);
    let ref_pyr = pyramid(&refi, params.pyramid_levels);

    let mut flow: Option<FlowField> = None;
    for level in (0..ref_pyr.len()).rev() {
        let r = &ref_pyr[level];
        let m = &mov_pyr[level];
        let (lw, lh) = r.dims();
        let scale = (1usize << level) as f64;
        let mut f = match flow.take() {
            None => FlowField::zeros(lw, lh),
            Some(coarse) => coarse.upsample_to(lw, lh),
        };
        refine_level(m, r, &mut f, params, max_disp / scale);
        flow = Some(f);
    }
    let mut field = flow.expect("at least one pyramid level");
    field.clamp_magnitude(max_disp);
    Ok(FlowEstimate {
        field,
        low_texture: false,
    })
}

/// Windowed LK iterations at one level.
///
/// Every pixel of a window was warped with its own flow, so each residual is
/// first carried to the centre pixel's flow to first order:
/// `dt_j + g_j . (f_i - f_j)`. Solving the damped normal equations of window
/// `i` then gives the new flow directly:
/// `f_i = (A_i + eps I)^-1 mean_j(G_j f_j - g_j dt_j)` with `G_j = g_j g_j^T`
/// and `A_i = mean_j G_j`. Reference gradients stand in for warped ones, so
/// `A` is fixed per level.
fn refine_level(
    moving: &GrayImage,
    reference: &GrayImage,
    flow: &mut FlowField,
    params: &FlowParams,
    max_disp: f64,
) {
    let (w, h) = reference.dims();
    let r = params.window_radius;
    let (gx, gy) = central_gradient(reference);
    let gxx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let gxy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let gyy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let counts = window_sum(&vec![1.0; w * h], w, h, r);
    let window_mean = |v: &[f64]| -> Vec<f64> {
        let mut s = window_sum(v, w, h, r);
        s.iter_mut().zip(&counts).for_each(|(a, n)| *a /= n);
        s
    };
    let mxx = window_mean(&gxx);
    let mxy = window_mean(&gxy);
    let myy = window_mean(&gyy);

    let mut px = vec![0.0; w * h];
    let mut py = vec![0.0; w * h];
    for _ in 0..params.iterations_per_level {
        let warped = warp_unclamped(moving, flow);
        for (i, (wv, rv)) in warped.data().iter().zip(reference.data()).enumerate() {
            let dt = wv - rv;
            let (fx, fy) = (flow.dx[i], flow.dy[i]);
            px[i] = gxx[i] * fx + gxy[i] * fy - gx[i] * dt;
            py[i] = gxy[i] * fx + gyy[i] * fy - gy[i] * dt;
        }
        let rx = window_mean(&px);
        let ry = window_mean(&py);
        let mut max_step: f64 = 0.0;
        for i in 0..w * h {
            let a = mxx[i] + TIKHONOV_EPS;
            let b = mxy[i];
            let c = myy[i] + TIKHONOV_EPS;
            let det = a * c - b * b;
            let u = (c * rx[i] - b * ry[i]) / det;
            let v = (a * ry[i] - b * rx[i]) / det;
            if u.is_finite() && v.is_finite() {
                max_step = max_step
                    .max((u - flow.dx[i]).abs())
                    .max((v - flow.dy[i]).abs());
                flow.dx[i] = u;
                flow.dy[i] = v;
            }
        }
        flow.clamp_magnitude(max_disp);
        if max_step < UPDATE_TOL {
            break;
        }
    }
}

/// Output of [`register_sequence`].
#[derive(Clone, Debug)]
pub struct RegisteredSequence {
    pub frames: FrameSequence,
    /// Flow of each original frame to the final reference.
    pub flows: Vec<FlowField>,
    /// Reference used in the final pass.
    pub reference: GrayImage,
}

/// Registers every frame to the mean reference with the default estimator.
pub fn register_sequence(
    seq: &FrameSequence,
    params: &FlowParams,
    refinement_passes: usize,
) -> Result<RegisteredSequence> {
    params.validate()?;
    register_sequence_with(seq, &LucasKanade::new(params.clone()), refinement_passes)
}

/// Pass 1 aligns to the plain mean. Each later pass rebuilds the reference from
/// the previous registered frames and re-estimates flow from the original
/// frames, so every output frame is interpolated exactly once.
pub fn register_sequence_with(
    seq: &FrameSequence,
    estimator: &dyn FlowEstimator,
    refinement_passes: usize,
) -> Result<RegisteredSequence> {
    if refinement_passes < 1 {
        return Err(Error::invalid("refinement_passes must be >= 1"));
    }
    let mut reference = build_reference(seq)?;
    let mut result = None;
    for pass in 0..refinement_passes {
        if pass > 0 {
            let prev: &RegisteredSequence = result.as_ref().unwrap();
            reference = build_reference(&prev.frames)?;
        }
        let aligned: Vec<(GrayImage, FlowField)> = seq
            .frames()
            .par_iter()
            .map(|frame| {
                let est = estimator.estimate(frame, &reference)?;
                let out = warp(frame, &est.field)?;
                Ok((out, est.field))
            })
            .collect::<Result<_>>()?;
        let (frames, flows): (Vec<_>, Vec<_>) = aligned.into_iter().unzip();
        result = Some(RegisteredSequence {
            frames: FrameSequence::new(frames)?,
            flows,
            reference: reference.clone(),
        });
    }
    Ok(result.unwrap())
}
