//! Image comparison helpers used by tests and the evaluation harness.

use crate::imgio::GrayImage;

/// Copy of the image without a `margin`-pixel frame.
pub fn crop_interior(img: &GrayImage, margin: usize) -> GrayImage {
    let (w, h) = img.dims();
    assert!(2 * margin < w && 2 * margin < h, "margin too large");
    GrayImage::from_fn(w - 2 * margin, h - 2 * margin, |x, y| {
        img.get(x + margin, y + margin)
    })
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// PSNR in dB for a peak value of 1, ignoring a `margin`-pixel border.
pub fn psnr_interior(a: &GrayImage, b: &GrayImage, margin: usize) -> f64 {
    let e = mse(&crop_interior(a, margin), &crop_interior(b, margin));
    if e == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * e.log10()
    }
}

/// Sum of squares of all samples.
pub fn energy(img: &GrayImage) -> f64 {
    img.data().iter().map(|v| v * v).sum()
}

pub fn max_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
