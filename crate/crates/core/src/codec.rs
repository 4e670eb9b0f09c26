//! Binary grid targets and the bit-score metric.
//!
//! A target is a `rows x cols` grid of square cells surrounded by a white
//! quiet border. Bit 1 is a black cell, bit 0 a white cell. Decoding needs no
//! localization: the restored image keeps the generated geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedTarget {
    pub rows: usize,
    pub cols: usize,
    pub cell_px: usize,
    pub quiet_border_px: usize,
    #[serde(with = "bit_string")]
    pub payload: Vec<bool>,
}

impl CodedTarget {
    /// 8x8 grid, 16 px cells, border of two cells.
    pub fn with_payload(payload: Vec<bool>) -> Result<Self> {
        let t = Self {
            rows: 8,
            cols: 8,
            cell_px: 16,
            quiet_border_px: 32,
            payload,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::invalid("target grid must be at least 2x2"));
        }
        if self.cell_px < 4 {
            return Err(Error::invalid("cell_px must be >= 4"));
        }
        if self.payload.len() != self.rows * self.cols {
            return Err(Error::LengthMismatch {
                left: self.payload.len(),
                right: self.rows * self.cols,
            });
        }
        Ok(())
    }

    /// `(width, height)` of the generated image.
    pub fn image_dims(&self) -> (usize, usize) {
        (
            self.cols * self.cell_px + 2 * self.quiet_border_px,
            self.rows * self.cell_px + 2 * self.quiet_border_px,
        )
    }

    /// Same geometry with a different payload.
    pub fn with_bits(&self, payload: Vec<bool>) -> Result<Self> {
        let t = Self {
            payload,
            ..self.clone()
        };
        t.validate()?;
        Ok(t)
    }
}

mod bit_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_bits(bits))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_bits(&s).map_err(serde::de::Error::custom)
    }
}

/// Bits as a string of `'0'` / `'1'`.
pub fn format_bits(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Parses a payload line; surrounding whitespace is ignored.
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::invalid(format!(
                "invalid payload character '{other}'"
            ))),
        })
        .collect()
}

pub fn generate_target(target: &CodedTarget) -> Result<GrayImage> {
    target.validate()?;
    let (w, h) = target.image_dims();
    let b = target.quiet_border_px;
    let grid_w = target.cols * target.cell_px;
    let grid_h = target.rows * target.cell_px;
    Ok(GrayImage::from_fn(w, h, |x, y| {
        if x < b || y < b || x >= b + grid_w || y >= b + grid_h {
            return 1.0;
        }
        let col = (x - b) / target.cell_px;
        let row = (y - b) / target.cell_px;
        if target.payload[row * target.cols + col] {
            0.0
        } else {
            1.0
        }
    }))
}

/// Mean of the central 50% x 50% of every cell, row-major.
pub fn cell_means(img: &GrayImage, geometry: &CodedTarget) -> Result<Vec<f64>> {
    let expected = geometry.image_dims();
    if img.dims() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: img.dims(),
        });
    }
    let c = geometry.cell_px;
    let lo = c / 4;
    let hi = c - c / 4;
    let b = geometry.quiet_border_px;
    let mut means = Vec::with_capacity(geometry.rows * geometry.cols);
    for row in 0..geometry.rows {
        for col in 0..geometry.cols {
            let x0 = b + col * c;
            let y0 = b + row * c;
            let mut sum = 0.0;
            for y in y0 + lo..y0 + hi {
                for x in x0 + lo..x0 + hi {
                    sum += img.get(x, y);
                }
            }
            means.push(sum / ((hi - lo) * (hi - lo)) as f64);
        }
    }
    Ok(means)
}

fn border_mean(img: &GrayImage, geometry: &CodedTarget) -> Option<f64> {
    let b = geometry.quiet_border_px;
    if b == 0 {
        return None;
    }
    let (w, h) = img.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x < b || y < b || x >= w - b || y >= h - b {
                sum += img.get(x, y);
                n += 1;
            }
        }
    }
    Some(sum / n as f64)
}

/// Two-class Otsu split of a 1-D population. Returns the midpoint between the
/// class means, or `None` when all values coincide.
pub fn otsu_midpoint(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 || sorted[n - 1] - sorted[0] <= 0.0 {
        return None;
    }
    let total: f64 = sorted.iter().sum();
    let mut left = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        left += sorted[i - 1];
        // only split between distinct values
        if sorted[i] == sorted[i - 1] {
            continue;
        }
        let n0 = i as f64;
        let n1 = (n - i) as f64;
        let m0 = left / n0;
        let m1 = (total - left) / n1;
        let between = n0 * n1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, 0.5 * (m0 + m1)));
        }
    }
    best.map(|(_, t)| t)
}

/// Decodes one bit per cell: central-region mean below the Otsu midpoint of
/// all cell means is a 1. When every cell has the same mean, cells are
/// compared against the midpoint between the cell level and the quiet border.
pub fn decode_target(img: &GrayImage, geometry: &CodedTarget) -> Result<Vec<bool>> {
    let means = cell_means(img, geometry)?;
    let threshold = match otsu_midpoint(&means) {
        Some(t) => t,
        None => match border_mean(img, geometry) {
            Some(border) => 0.5 * (means[0] + border),
            None => means[0],
        },
    };
    Ok(means.iter().map(|&m| m < threshold).collect())
}

/// Fraction of positions where the bits agree.
pub fn bit_score(decoded: &[bool], truth: &[bool]) -> Result<f64> {
    if decoded.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: decoded.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let same = decoded.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(same as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> CodedTarget {
        CodedTarget::with_payload((0..64).map(|i| (i / 8 + i % 8) % 2 == 1).collect()).unwrap()
    }

    #[test]
    fn all_zero_is_white() {
        let t = CodedTarget::with_payload(vec![false; 64]).unwrap();
        let img = generate_target(&t).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
        assert_eq!(decode_target(&img, &t).unwrap(), t.payload);
    }

    #[test]
    fn all_one_decodes() {
        let t = CodedTarget::with_payload(vec![true; 64]).unwrap();
        let img = generate_target(&t).unwrap();
        assert_eq!(decode_target(&img, &t).unwrap(), t.payload);
    }

    #[test]
    fn checkerboard_layout() {
        let t = checker();
        let img = generate_target(&t).unwrap();
        assert_eq!(img.dims(), (192, 192));
        // first cell (row 0, col 0) is bit 0 -> white, its right neighbour black
        assert_eq!(img.get(32, 32), 1.0);
        assert_eq!(img.get(48, 32), 0.0);
        assert_eq!(img.get(47, 47), 1.0);
        assert_eq!(img.get(32 + 127, 32 + 127), 1.0);
        assert_eq!(decode_target(&img, &t).unwrap(), t.payload);
    }

    #[test]
    fn compressed_contrast_still_decodes() {
        let t = checker();
        let img = generate_target(&t).unwrap().map(|v| 0.3 + 0.4 * v);
        assert_eq!(decode_target(&img, &t).unwrap(), t.payload);
    }

    #[test]
    fn blurred_target_returns_full_length() {
        let t = checker();
        let img = crate::filter::gaussian_blur(&generate_target(&t).unwrap(), 8.0);
        assert_eq!(decode_target(&img, &t).unwrap().len(), 64);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let t = checker();
        let img = GrayImage::filled(100, 100, 1.0);
        assert!(matches!(
            decode_target(&img, &t),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn score_arithmetic() {
        let a = vec![true; 64];
        assert_eq!(bit_score(&a, &a).unwrap(), 1.0);
        let comp: Vec<bool> = a.iter().map(|b| !b).collect();
        assert_eq!(bit_score(&a, &comp).unwrap(), 0.0);
        let mut eight_wrong = a.clone();
        eight_wrong[..8].iter_mut().for_each(|b| *b = false);
        assert_eq!(bit_score(&eight_wrong, &a).unwrap(), 0.875);
        assert!(bit_score(&a[..3], &a).is_err());
    }

    #[test]
    fn bit_strings() {
        let bits = parse_bits(" 0110\n").unwrap();
        assert_eq!(bits, vec![false, true, true, false]);
        assert_eq!(format_bits(&bits), "0110");
        assert!(parse_bits("01x").is_err());
    }

    #[test]
    fn invalid_geometry() {
        assert!(CodedTarget::with_payload(vec![true; 63]).is_err());
        let t = CodedTarget {
            rows: 1,
            cols: 8,
            cell_px: 16,
            quiet_border_px: 0,
            payload: vec![false; 8],
        };
        assert!(generate_target(&t).is_err());
    }
}
