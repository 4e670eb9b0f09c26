//! The four-stage restoration: register, select and average, deblur,
//! postprocess.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deblur::{ClassicalDeblurrer, DeblurParams, Deblurred, Deblurrer};
use crate::error::{Error, Result};
use crate::imgio::{FrameSequence, GrayImage};
use crate::postprocess::{postprocess, PostprocessParams, DEFAULT_RINGING_RADIUS};
use crate::registration::{register_sequence, FlowParams, RegisteredSequence};
use crate::selection::{select_and_average, sharpness, Fusion, SelectionParams};

/// Every tunable of the pipeline. Missing keys in the TOML form take their
/// defaults, so an empty file is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub refinement_passes: usize,
    pub flow: FlowParams,
    pub selection: SelectionParams,
    pub deblur: DeblurParams,
    pub postprocess: PostprocessParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            refinement_passes: 2,
            flow: FlowParams::default(),
            selection: SelectionParams::default(),
            deblur: DeblurParams::default(),
            postprocess: PostprocessParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refinement_passes < 1 {
            return Err(Error::Config("refinement_passes must be >= 1".into()));
        }
        self.flow.validate()?;
        self.selection.validate()?;
        self.deblur.validate()?;
        self.postprocess.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Wall-clock seconds spent in each stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub registration: f64,
    pub selection: f64,
    pub deblur: f64,
    pub postprocess: f64,
}

/// Everything one restoration run produces.
#[derive(Clone, Debug)]
pub struct Restoration {
    pub registered: RegisteredSequence,
    pub fusion: Fusion,
    pub deblurred: Deblurred,
    pub output: GrayImage,
    pub timings: StageTimings,
}

impl Restoration {
    pub fn reference(&self) -> &GrayImage {
        &self.registered.reference
    }

    pub fn fused(&self) -> &GrayImage {
        &self.fusion.fused
    }
}

/// Pipeline stage names used in error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Registration,
    Selection,
    Deblur,
    Postprocess,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Registration => "registration",
            Stage::Selection => "selection",
            Stage::Deblur => "deblur",
            Stage::Postprocess => "postprocess",
        }
    }
}

fn in_stage<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.as_str(),
        source: Box::new(e),
    })
}

fn check_finite(stage: Stage, img: &GrayImage) -> Result<()> {
    if img.is_finite() {
        Ok(())
    } else {
        in_stage(
            stage,
            Err(Error::Numeric("stage produced non-finite samples".into())),
        )
    }
}

/// Runs all four stages with the classical deblurrer.
pub fn restore_sequence(seq: &FrameSequence, config: &PipelineConfig) -> Result<Restoration> {
    let deblurrer = ClassicalDeblurrer {
        params: config.deblur.clone(),
        psf: None,
    };
    restore_sequence_with(seq, config, &deblurrer)
}

/// Runs all four stages with a caller-supplied deblurrer.
pub fn restore_sequence_with(
    seq: &FrameSequence,
    config: &PipelineConfig,
    deblurrer: &dyn Deblurrer,
) -> Result<Restoration> {
    config.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let registered = in_stage(
        Stage::Registration,
        register_sequence(seq, &config.flow, config.refinement_passes),
    )?;
    timings.registration = t.elapsed().as_secs_f64();
    for f in registered.frames.iter() {
        check_finite(Stage::Registration, f)?;
    }

    let t = Instant::now();
    let fusion = in_stage(
        Stage::Selection,
        select_and_average(&registered.frames, &config.selection),
    )?;
    timings.selection = t.elapsed().as_secs_f64();
    check_finite(Stage::Selection, &fusion.fused)?;

    let (deblurred, output, td, tp) = finish_timed(&fusion.fused, config, deblurrer)?;
    timings.deblur = td;
    timings.postprocess = tp;
    Ok(Restoration {
        registered,
        fusion,
        deblurred,
        output,
        timings,
    })
}

/// Stages C and D applied to an already fused image.
pub fn deblur_and_refine(
    fused: &GrayImage,
    config: &PipelineConfig,
    deblurrer: &dyn Deblurrer,
) -> Result<(Deblurred, GrayImage)> {
    config.validate()?;
    let (d, o, _, _) = finish_timed(fused, config, deblurrer)?;
    Ok((d, o))
}

fn finish_timed(
    fused: &GrayImage,
    config: &PipelineConfig,
    deblurrer: &dyn Deblurrer,
) -> Result<(Deblurred, GrayImage, f64, f64)> {
    let t = Instant::now();
    let deblurred = in_stage(Stage::Deblur, deblurrer.deblur(fused))?;
    let td = t.elapsed().as_secs_f64();
    check_finite(Stage::Deblur, &deblurred.image)?;

    let t = Instant::now();
    let mut post = config.postprocess.clone();
    if post.ringing_radius.is_none() {
        post.ringing_radius = Some(
            deblurred
                .psf
                .as_ref()
                .map_or(DEFAULT_RINGING_RADIUS, |p| p.radius()),
        );
    }
    let output = in_stage(
        Stage::Postprocess,
        postprocess(&deblurred.image, fused, &post),
    )?;
    let tp = t.elapsed().as_secs_f64();
    if !output.in_unit_range() {
        return in_stage(
            Stage::Postprocess,
            Err(Error::Numeric("output left the unit range".into())),
        );
    }
    Ok((deblurred, output, td, tp))
}

/// Tenengrad sharpness of each stage image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSharpness {
    pub raw_mean: f64,
    pub reference: f64,
    pub fused: f64,
    pub deblurred: f64,
    pub restored: f64,
}

impl StageSharpness {
    pub fn measure(raw: &FrameSequence, r: &Restoration) -> Result<Self> {
        let raw_mean = raw
            .iter()
            .map(sharpness)
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum::<f64>()
            / raw.len() as f64;
        Ok(Self {
            raw_mean,
            reference: sharpness(r.reference())?,
            fused: sharpness(r.fused())?,
            deblurred: sharpness(&r.deblurred.image)?,
            restored: sharpness(&r.output)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(
            PipelineConfig::from_toml_str("").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn partial_config_overrides() {
        let cfg = PipelineConfig::from_toml_str(
            "refinement_passes = 1\n[selection]\nkeep_fraction = 0.25\n[deblur]\nmethod = \"richardson_lucy\"\n",
        )
        .unwrap();
        assert_eq!(cfg.refinement_passes, 1);
        assert_eq!(cfg.selection.keep_fraction, 0.25);
        assert_eq!(cfg.selection.min_keep, 8);
        assert_eq!(
            cfg.deblur.method,
            crate::deblur::DeblurMethod::RichardsonLucy
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml_str("[selection]\nkeep_fraction = 2.0").is_err());
        assert!(PipelineConfig::from_toml_str("refinement_passes = 0").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let mut cfg = PipelineConfig::default();
        cfg.deblur.psf_sigma = Some(1.75);
        cfg.deblur.nsr = 3.3e-4;
        cfg.postprocess.ringing_radius = Some(9);
        cfg.flow.max_displacement = Some(12.5);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
