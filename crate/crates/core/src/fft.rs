//! 2-D FFT on row-major complex buffers, built on `rustfft`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest `m >= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub(crate) struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1 / (w h)` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.width * self.height) as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
    }

    fn run(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.width * self.height);
        rows.process(buf);
        let mut t = transpose(buf, self.width, self.height);
        cols.process(&mut t);
        let back = transpose(&t, self.height, self.width);
        buf.copy_from_slice(&back);
    }
}

fn transpose(src: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::default(); src.len()];
    for y in 0..height {
        for x in 0..width {
            dst[x * height + y] = src[y * width + x];
        }
    }
    dst
}

/// Places a centered odd-sized kernel on a `width x height` grid with its
/// center at the origin (wrapping negative offsets) and transforms it.
pub(crate) fn kernel_spectrum(
    kernel: &[f64],
    size: usize,
    width: usize,
    height: usize,
    plan: &Fft2d,
) -> Vec<Complex64> {
    let r = (size / 2) as isize;
    let mut buf = vec![Complex64::default(); width * height];
    for ky in 0..size {
        let y = (ky as isize - r).rem_euclid(height as isize) as usize;
        for kx in 0..size {
            let x = (kx as isize - r).rem_euclid(width as isize) as usize;
            buf[y * width + x].re += kernel[ky * size + kx];
        }
    }
    plan.forward(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(11), 12);
        assert_eq!(next_fast_len(289), 300);
        assert_eq!(next_fast_len(256), 256);
    }

    #[test]
    fn roundtrip_is_identity() {
        let (w, h) = (12, 10);
        let plan = Fft2d::new(w, h);
        let orig: Vec<Complex64> = (0..w * h)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let mut buf = orig.clone();
        plan.forward(&mut buf);
        plan.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_term_is_sum() {
        let plan = Fft2d::new(5, 3);
        let mut buf: Vec<Complex64> = (0..15).map(|i| Complex64::new(i as f64, 0.0)).collect();
        plan.forward(&mut buf);
        assert!((buf[0].re - 105.0).abs() < 1e-9);
    }
}
