//! Deterministic synthetic test images.

use crate::filter::gaussian_blur;
use crate::imgio::GrayImage;
use crate::simulator::SimRng;

/// Checkerboard of `cell`-pixel squares overlaid with smooth and fine random
/// texture, so every window has gradient energy in both directions.
pub fn textured_checkerboard(width: usize, height: usize, cell: usize, seed: u64) -> GrayImage {
    let mut rng = SimRng::new(seed);
    let fine = random_texture(width, height, 1.5, &mut rng);
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.uniform(0.02, 0.12),
                rng.uniform(0.02, 0.12),
                rng.uniform(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    GrayImage::from_fn(width, height, |x, y| {
        let check = if ((x / cell) + (y / cell)).is_multiple_of(2) {
            0.3
        } else {
            0.7
        };
        let smooth: f64 = waves
            .iter()
            .map(|&(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
            .sum::<f64>()
            * 0.04;
        (check + smooth + 0.5 * fine.get(x, y)).clamp(0.0, 1.0)
    })
}

/// Zero-mean white noise smoothed with `sigma` and scaled to unit-ish
/// amplitude (standard deviation about 0.25).
pub fn random_texture(width: usize, height: usize, sigma: f64, rng: &mut SimRng) -> GrayImage {
    let noise = GrayImage::from_fn(width, height, |_, _| rng.normal());
    let smooth = gaussian_blur(&noise, sigma);
    let sd = (smooth.data().iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64).sqrt();
    smooth.map(|v| 0.25 * v / sd.max(1e-12))
}

/// Natural-looking blob image in `[0, 1]`: mixed-scale smoothed noise.
pub fn blob_scene(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = SimRng::new(seed);
    let coarse = random_texture(width, height, 6.0, &mut rng);
    let mid = random_texture(width, height, 2.0, &mut rng);
    let fine = random_texture(width, height, 0.8, &mut rng);
    GrayImage::from_fn(width, height, |x, y| {
        (0.5 + 0.8 * coarse.get(x, y) + 0.4 * mid.get(x, y) + 0.2 * fine.get(x, y)).clamp(0.0, 1.0)
    })
}
