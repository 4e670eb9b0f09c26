//! Grayscale rasters, frame sequences and their on-disk layout.
//!
//! All pipeline stages work on normalized `f64` luminance. Samples are only
//! clamped to `[0, 1]` when entering or leaving the program (load, save, final
//! output); intermediate results such as deconvolution output may overshoot.
//!
//! A sequence on disk is a directory of `frame_0000.png`, `frame_0001.png`, ...
//! (PGM is accepted on input). Indices must be contiguous from zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageError, ImageReader, Luma};

use crate::error::{Error, Result};

/// Single-channel floating point raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every sample set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
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
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Sample with edge-clamped integer coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a real-valued position; outside the raster the
    /// nearest edge value is used.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let top = self.data[row0 + x0] + fx * (self.data[row0 + x1] - self.data[row0 + x0]);
        let bottom = self.data[row1 + x0] + fx * (self.data[row1 + x1] - self.data[row1 + x0]);
        top + fy * (bottom - top)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with every sample clamped to `[0, 1]`; NaN becomes 0.
    pub fn clamped(&self) -> Self {
        self.map(clamp_unit)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every sample is finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data
            .iter()
            .all(|&v| v.is_finite() && (0.0..=1.0).contains(&v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Ordered, shape-homogeneous, non-empty list of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<GrayImage>,
}

impl FrameSequence {
    pub fn new(frames: Vec<GrayImage>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        for frame in &frames[1..] {
            first.same_shape(frame)?;
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<GrayImage> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GrayImage> {
        self.frames.iter()
    }
}

impl std::ops::Index<usize> for FrameSequence {
    type Output = GrayImage;

    fn index(&self, index: usize) -> &GrayImage {
        &self.frames[index]
    }
}

impl<'a> IntoIterator for &'a FrameSequence {
    type Item = &'a GrayImage;
    type IntoIter = std::slice::Iter<'a, GrayImage>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Loads an 8/16-bit gray or RGB(A) PNG/PGM/PPM as normalized luminance.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Classify by content, not extension: unknown magic is "unsupported",
    // known magic that fails to decode is "corrupt".
    let format = image::guess_format(&bytes).map_err(|_| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: "unrecognized file signature".into(),
    })?;
    let decoded = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| map_image_error(path, e))?;
    dynamic_to_gray(path, decoded)
}

fn map_image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::Unsupported(e) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
        // decoding reads from memory, so an I/O error here means truncation
        other => Error::CorruptImage {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

fn dynamic_to_gray(path: &Path, img: DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!(
                    "pixel layout {:?} is not 8/16-bit gray or RGB",
                    other.color()
                ),
            })
        }
    };
    let img = GrayImage::new(w, h, data)?;
    Ok(img.clamped())
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    LUMA_R * r + LUMA_G * g + LUMA_B * b
}

/// Quantizes a sample to 8 bits: `round(clamp(v, 0, 1) * 255)`.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Writes an 8-bit grayscale PNG.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, bytes)
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}

const RAW_MAGIC: &[u8; 8] = b"TFRAW64\n";

/// Writes the exact samples: an 8-byte magic, width and height as u32 LE,
/// then `f64` LE samples in row-major order. Used for lossless stage dumps.
pub fn save_raw(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + 8 * img.len());
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&(img.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.height() as u32).to_le_bytes());
    for v in img.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`save_raw`].
pub fn load_raw(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: &str| Error::CorruptImage {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "not a raw f64 image".into(),
        });
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() - 16 != 8 * width * height {
        return Err(corrupt("sample count does not match the header"));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    GrayImage::new(width, height, data).map_err(|e| corrupt(&e.to_string()))
}

/// File name of frame `index` in the sequence layout.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let stem = name.strip_prefix("frame_")?;
    let digits = stem
        .strip_suffix(".png")
        .or_else(|| stem.strip_suffix(".pgm"))?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Lists the frame files of a sequence directory in index order.
pub fn sequence_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut by_index = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(index) = name.to_str().and_then(parse_frame_index) else {
            continue;
        };
        if by_index.insert(index, entry.path()).is_some() {
            return Err(Error::invalid(format!(
                "frame index {index} appears more than once in {}",
                dir.display()
            )));
        }
    }
    if by_index.is_empty() {
        return Err(Error::EmptySequence);
    }
    for (expected, &index) in by_index.keys().enumerate() {
        if index != expected {
            return Err(Error::SequenceGap { missing: expected });
        }
    }
    Ok(by_index.into_values().collect())
}

/// Loads `frame_%04d.(png|pgm)` files from `dir` in index order.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let frames = sequence_files(dir)?
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Writes every frame as `frame_%04d.png` into an existing directory.
pub fn save_sequence(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (i, frame) in seq.iter().enumerate() {
        save_image(frame, dir.join(frame_file_name(i)))?;
    }
    Ok(())
}
