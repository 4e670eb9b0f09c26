//! Small spatial filters shared by the stages: Gaussian smoothing, window
//! sums, gradients and pyramid decimation. Borders replicate the edge pixel.

use crate::imgio::GrayImage;

/// Normalized 1-D Gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as usize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur with edge replication. `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let taps = gaussian_kernel_1d(sigma);
    separable(img, &taps)
}

/// Applies the same symmetric 1-D kernel along rows then columns.
pub(crate) fn separable(img: &GrayImage, taps: &[f64]) -> GrayImage {
    let (w, h) = img.dims();
    let r = (taps.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let xs = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * row[xs];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let ys = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[ys * w..(ys + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    GrayImage::new(w, h, out).expect("shape preserved")
}

/// Sum of `values` over the `(2r+1)^2` window around each pixel, with the
/// window truncated at the raster border.
pub fn window_sum(values: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    debug_assert_eq!(values.len(), width * height);
    let mut rows = vec![0.0; width * height];
    let mut prefix = vec![0.0; width.max(height) + 1];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            prefix[x + 1] = prefix[x] + row[x];
        }
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(width);
            rows[y * width + x] = prefix[hi] - prefix[lo];
        }
    }
    let mut out = vec![0.0; width * height];
    for x in 0..width {
        for y in 0..height {
            prefix[y + 1] = prefix[y] + rows[y * width + x];
        }
        for y in 0..height {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(height);
            out[y * width + x] = prefix[hi] - prefix[lo];
        }
    }
    out
}

/// Central-difference gradients `(d/dx, d/dy)`, one-sided at the border.
pub fn central_gradient(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let d = img.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let sy = if yp - ym == 2 { 0.5 } else { 1.0 };
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let sx = if xp - xm == 2 { 0.5 } else { 1.0 };
            let i = y * w + x;
            if xp != xm {
                gx[i] = (d[y * w + xp] - d[y * w + xm]) * sx;
            }
            if yp != ym {
                gy[i] = (d[yp * w + x] - d[ym * w + x]) * sy;
            }
        }
    }
    (gx, gy)
}

/// Blurs with sigma 1 and keeps every second sample.
pub fn downsample2(img: &GrayImage) -> GrayImage {
    let smooth = gaussian_blur(img, 1.0);
    let (w, h) = img.dims();
    let nw = w.div_ceil(2);
    let nh = h.div_ceil(2);
    GrayImage::from_fn(nw, nh, |x, y| smooth.get(2 * x, 2 * y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 2.5] {
            let k = gaussian_kernel_1d(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let n = k.len();
            for i in 0..n / 2 {
                assert_eq!(k[i], k[n - 1 - i]);
            }
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = GrayImage::filled(9, 7, 0.42);
        let out = gaussian_blur(&img, 1.7);
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn window_sum_matches_brute_force() {
        let (w, h, r) = (7usize, 5usize, 2usize);
        let vals: Vec<f64> = (0..w * h).map(|i| (i * 37 % 11) as f64).collect();
        let fast = window_sum(&vals, w, h, r);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        s += vals[yy * w + xx];
                    }
                }
                assert!((fast[y * w + x] - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradient_of_ramp() {
        let img = GrayImage::from_fn(6, 4, |x, y| 0.1 * x as f64 + 0.02 * y as f64);
        let (gx, gy) = central_gradient(&img);
        for v in gx {
            assert!((v - 0.1).abs() < 1e-12);
        }
        for v in gy {
            assert!((v - 0.02).abs() < 1e-12);
        }
    }
}
