//! Stage B: rank registered frames by gradient energy and average the sharpest.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{FrameSequence, GrayImage};
use crate::registration::mean_of;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessScore {
    pub frame_index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub keep_fraction: f64,
    pub min_keep: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            keep_fraction: 0.5,
            min_keep: 8,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }

    /// Number of frames kept out of `n`.
    pub fn keep_count(&self, n: usize) -> usize {
        let k = (self.keep_fraction * n as f64).round() as usize;
        k.max(self.min_keep).min(n)
    }
}

/// Tenengrad: mean of `Gx^2 + Gy^2` over interior pixels, with 3x3 Sobel
/// responses. Border pixels are skipped.
pub fn sharpness(img: &GrayImage) -> Result<f64> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let d = img.data();
    let mut total = 0.0;
    for y in 1..h - 1 {
        let up = &d[(y - 1) * w..y * w];
        let mid = &d[y * w..(y + 1) * w];
        let dn = &d[(y + 1) * w..(y + 2) * w];
        let mut row = 0.0;
        for x in 1..w - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + dn[x + 1])
                - (up[x - 1] + 2.0 * mid[x - 1] + dn[x - 1]);
            let gy = (dn[x - 1] + 2.0 * dn[x] + dn[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            row += gx * gx + gy * gy;
        }
        total += row;
    }
    Ok(total / ((w - 2) * (h - 2)) as f64)
}

/// Scores sorted by descending sharpness; ties keep ascending frame order.
pub fn rank_frames(seq: &FrameSequence) -> Result<Vec<SharpnessScore>> {
    let mut scores = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(frame_index, f)| {
            Ok(SharpnessScore {
                frame_index,
                score: sharpness(f)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.frame_index.cmp(&b.frame_index),
        o => o,
    });
    Ok(scores)
}

/// Result of [`select_and_average`].
#[derive(Clone, Debug)]
pub struct Fusion {
    pub fused: GrayImage,
    pub ranking: Vec<SharpnessScore>,
    /// Indices of the kept frames in ascending order.
    pub selected: Vec<usize>,
}

/// Uniform mean of the `K` sharpest frames. The kept frames are summed in
/// acquisition order, so keeping everything reproduces the plain mean.
pub fn select_and_average(seq: &FrameSequence, params: &SelectionParams) -> Result<Fusion> {
    params.validate()?;
    let ranking = rank_frames(seq)?;
    let k = params.keep_count(seq.len());
    let mut selected: Vec<usize> = ranking[..k].iter().map(|s| s.frame_index).collect();
    selected.sort_unstable();
    let fused = mean_of(selected.iter().map(|&i| &seq[i]))?;
    Ok(Fusion {
        fused,
        ranking,
        selected,
    })
}

/// Writes `frame_index,score` rows with a header line.
pub fn write_scores_csv(scores: &[SharpnessScore], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "frame_index,score")?;
    for s in scores {
        writeln!(out, "{},{}", s.frame_index, s.score)?;
    }
    Ok(())
}
