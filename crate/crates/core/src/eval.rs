//! Batch evaluation: restore every sequence of a dataset, decode the coded
//! target after each stage and aggregate bit scores per tier.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{bit_score, decode_target, CodedTarget};
use crate::dataset::{list_sequences, SequenceEntry};
use crate::error::{Error, Result};
use crate::imgio::{FrameSequence, GrayImage};
use crate::pipeline::{restore_sequence, PipelineConfig, StageSharpness, StageTimings};
use crate::simulator::Strength;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub id: String,
    pub strength: String,
    pub n_frames: usize,
    pub bit_score_raw_mean: Option<f64>,
    pub bit_score_raw_best: Option<f64>,
    pub bit_score_fused: Option<f64>,
    pub bit_score_deblurred: Option<f64>,
    /// Present iff the pipeline completed.
    pub bit_score_restored: Option<f64>,
    pub sharpness: Option<StageSharpness>,
    pub timings: Option<StageTimings>,
    pub error: Option<String>,
}

/// Means over the sequences of one tier that have the respective score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub strength: String,
    pub sequences: usize,
    pub completed: usize,
    pub bit_score_raw_mean: Option<f64>,
    pub bit_score_raw_best: Option<f64>,
    pub bit_score_fused: Option<f64>,
    pub bit_score_deblurred: Option<f64>,
    pub bit_score_restored: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub config: PipelineConfig,
    pub sequences: Vec<SequenceReport>,
    pub tiers: Vec<TierSummary>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Record wall-clock stage timings. Off by default so that reports of
    /// identical runs are byte-identical.
    pub include_timings: bool,
}

fn score(img: &GrayImage, target: &CodedTarget) -> Result<f64> {
    bit_score(&decode_target(img, target)?, &target.payload)
}

/// Mean and best bit score over the raw frames.
pub fn raw_scores(frames: &FrameSequence, target: &CodedTarget) -> Result<(f64, f64)> {
    let scores = frames
        .iter()
        .map(|f| score(f, target))
        .collect::<Result<Vec<_>>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let best = scores.iter().copied().fold(0.0, f64::max);
    Ok((mean, best))
}

/// Restores and scores one already loaded sequence. Pipeline failures are
/// recorded in the report instead of returned.
pub fn evaluate_frames(
    id: &str,
    strength: &str,
    frames: &FrameSequence,
    target: &CodedTarget,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> SequenceReport {
    let mut report = SequenceReport {
        id: id.to_string(),
        strength: strength.to_string(),
        n_frames: frames.len(),
        bit_score_raw_mean: None,
        bit_score_raw_best: None,
        bit_score_fused: None,
        bit_score_deblurred: None,
        bit_score_restored: None,
        sharpness: None,
        timings: None,
        error: None,
    };
    match raw_scores(frames, target) {
        Ok((mean, best)) => {
            report.bit_score_raw_mean = Some(mean);
            report.bit_score_raw_best = Some(best);
        }
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    }
    let result = restore_sequence(frames, config).and_then(|r| {
        let fused = score(r.fused(), target)?;
        let deblurred = score(&r.deblurred.image, target)?;
        let restored = score(&r.output, target)?;
        let sharp = StageSharpness::measure(frames, &r)?;
        Ok((fused, deblurred, restored, sharp, r.timings))
    });
    match result {
        Ok((fused, deblurred, restored, sharp, timings)) => {
            report.bit_score_fused = Some(fused);
            report.bit_score_deblurred = Some(deblurred);
            report.bit_score_restored = Some(restored);
            report.sharpness = Some(sharp);
            if options.include_timings {
                report.timings = Some(timings);
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

fn evaluate_entry(dir: &Path, config: &PipelineConfig, options: &EvalOptions) -> SequenceReport {
    let fallback_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let failed = |id: String, strength: String, n_frames: usize, e: Error| SequenceReport {
        id,
        strength,
        n_frames,
        bit_score_raw_mean: None,
        bit_score_raw_best: None,
        bit_score_fused: None,
        bit_score_deblurred: None,
        bit_score_restored: None,
        sharpness: None,
        timings: None,
        error: Some(e.to_string()),
    };
    let entry = match SequenceEntry::open(dir) {
        Ok(e) => e,
        Err(e) => return failed(fallback_id, "unknown".into(), 0, e),
    };
    let Some(target) = entry.target.clone() else {
        return failed(
            entry.id,
            entry.meta.strength,
            entry.meta.n_frames,
            Error::Metadata {
                path: dir.to_path_buf(),
                detail: "no coded target ground truth (payload.txt and target geometry)".into(),
            },
        );
    };
    match entry.load_frames() {
        Ok(frames) => evaluate_frames(
            &entry.id,
            &entry.meta.strength,
            &frames,
            &target,
            config,
            options,
        ),
        Err(e) => failed(entry.id, entry.meta.strength, entry.meta.n_frames, e),
    }
}

/// Evaluates every sequence directory under `root`. Sequences run in
/// parallel; the report keeps directory-name order.
pub fn evaluate_dataset(
    root: impl AsRef<Path>,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    config.validate()?;
    let dirs = list_sequences(root)?;
    let sequences: Vec<SequenceReport> = dirs
        .par_iter()
        .map(|d| evaluate_entry(d, config, options))
        .collect();
    Ok(build_report(config.clone(), sequences))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn tier_rank(name: &str) -> (usize, String) {
    let known = Strength::ALL.iter().position(|s| s.as_str() == name);
    (known.unwrap_or(Strength::ALL.len()), name.to_string())
}

/// Per-tier means. Known simulator tiers come first in weak, medium, strong
/// order, other tier names follow alphabetically.
pub fn summarize(sequences: &[SequenceReport]) -> Vec<TierSummary> {
    let mut groups: BTreeMap<(usize, String), Vec<&SequenceReport>> = BTreeMap::new();
    for s in sequences {
        groups.entry(tier_rank(&s.strength)).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|((_, strength), rows)| TierSummary {
            strength,
            sequences: rows.len(),
            completed: rows
                .iter()
                .filter(|r| r.bit_score_restored.is_some())
                .count(),
            bit_score_raw_mean: mean_of(rows.iter().map(|r| r.bit_score_raw_mean)),
            bit_score_raw_best: mean_of(rows.iter().map(|r| r.bit_score_raw_best)),
            bit_score_fused: mean_of(rows.iter().map(|r| r.bit_score_fused)),
            bit_score_deblurred: mean_of(rows.iter().map(|r| r.bit_score_deblurred)),
            bit_score_restored: mean_of(rows.iter().map(|r| r.bit_score_restored)),
        })
        .collect()
}

pub fn build_report(config: PipelineConfig, sequences: Vec<SequenceReport>) -> EvalReport {
    let tiers = summarize(&sequences);
    EvalReport {
        version: REPORT_VERSION,
        config,
        sequences,
        tiers,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Console table: one row per sequence, then one per tier.
    pub fn table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}  status",
            "sequence", "tier", "raw", "raw_best", "fused", "deblur", "restored"
        );
        for s in &self.sequences {
            let _ = writeln!(
                out,
                "{:<20} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}  {}",
                s.id,
                s.strength,
                cell(s.bit_score_raw_mean),
                cell(s.bit_score_raw_best),
                cell(s.bit_score_fused),
                cell(s.bit_score_deblurred),
                cell(s.bit_score_restored),
                s.error.as_deref().unwrap_or("ok")
            );
        }
        for t in &self.tiers {
            let _ = writeln!(
                out,
                "{:<20} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}  {}/{} completed",
                "[mean]",
                t.strength,
                cell(t.bit_score_raw_mean),
                cell(t.bit_score_raw_best),
                cell(t.bit_score_fused),
                cell(t.bit_score_deblurred),
                cell(t.bit_score_restored),
                t.completed,
                t.sequences
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, tier: &str, raw: f64, restored: Option<f64>) -> SequenceReport {
        SequenceReport {
            id: id.into(),
            strength: tier.into(),
            n_frames: 10,
            bit_score_raw_mean: Some(raw),
            bit_score_raw_best: Some(raw),
            bit_score_fused: restored,
            bit_score_deblurred: restored,
            bit_score_restored: restored,
            sharpness: None,
            timings: None,
            error: restored.is_none().then(|| "failed".to_string()),
        }
    }

    #[test]
    fn tiers_are_ordered_and_averaged() {
        let rows = vec![
            row("a", "strong", 0.5, Some(0.75)),
            row("b", "very-high", 0.25, None),
            row("c", "weak", 0.5, Some(1.0)),
            row("d", "weak", 1.0, Some(0.5)),
            row("e", "strong", 0.25, None),
        ];
        let tiers = summarize(&rows);
        let names: Vec<&str> = tiers.iter().map(|t| t.strength.as_str()).collect();
        assert_eq!(names, vec!["weak", "strong", "very-high"]);
        assert_eq!(tiers[0].bit_score_raw_mean, Some(0.75));
        assert_eq!(tiers[0].bit_score_restored, Some(0.75));
        assert_eq!(tiers[1].completed, 1);
        assert_eq!(tiers[1].bit_score_restored, Some(0.75));
        assert_eq!(tiers[2].bit_score_restored, None);
    }

    #[test]
    fn report_json_roundtrip() {
        let report = build_report(
            PipelineConfig::default(),
            vec![
                row("a", "weak", 0.1 + 0.2, Some(1.0 / 3.0)),
                row("b", "medium", 0.7, None),
            ],
        );
        let text = report.to_json().unwrap();
        let back = EvalReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(report.table().contains("failed"));
    }

    #[test]
    fn empty_dataset_gives_empty_report() {
        let tmp = tempfile::tempdir().unwrap();
        let report = evaluate_dataset(
            tmp.path(),
            &PipelineConfig::default(),
            &EvalOptions::default(),
        )
        .unwrap();
        assert!(report.sequences.is_empty());
        assert!(report.tiers.is_empty());
    }
}
