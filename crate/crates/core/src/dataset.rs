//! On-disk layout of a simulated sequence.
//!
//! ```text
//! <dir>/frame_0000.png ... frame_NNNN.png
//! <dir>/meta.json      seed, tier, frame count, turbulence draw, target geometry
//! <dir>/payload.txt    ground-truth bits as one line of '0'/'1' (coded targets only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{format_bits, generate_target, parse_bits, CodedTarget};
use crate::error::{Error, Result};
use crate::imgio::{load_sequence, save_sequence, FrameSequence, GrayImage};
use crate::simulator::{
    degrade_sequence, sample_strength, SimRng, SimulatedSequence, Strength, TurbulenceParams,
};

pub const META_FILE: &str = "meta.json";
pub const PAYLOAD_FILE: &str = "payload.txt";

/// Stream indices reserved for dataset-level draws; frame streams start at 0.
const STRENGTH_STREAM: u64 = 1 << 62;
const PAYLOAD_STREAM: u64 = (1 << 62) + 1;

/// Grid geometry of a coded target, without its payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetGeometry {
    pub rows: usize,
    pub cols: usize,
    pub cell_px: usize,
    pub quiet_border_px: usize,
}

impl TargetGeometry {
    pub fn of(target: &CodedTarget) -> Self {
        Self {
            rows: target.rows,
            cols: target.cols,
            cell_px: target.cell_px,
            quiet_border_px: target.quiet_border_px,
        }
    }

    pub fn with_payload(self, payload: Vec<bool>) -> Result<CodedTarget> {
        let t = CodedTarget {
            rows: self.rows,
            cols: self.cols,
            cell_px: self.cell_px,
            quiet_border_px: self.quiet_border_px,
            payload,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Contents of `meta.json`. The tier is a free-form string so datasets with
/// other tier names can be evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub seed: u64,
    pub strength: String,
    pub n_frames: usize,
    #[serde(default)]
    pub params: Option<TurbulenceParams>,
    #[serde(default)]
    pub target: Option<TargetGeometry>,
}

/// Random payload for a coded target, derived from the sequence seed.
pub fn payload_from_seed(seed: u64, bits: usize) -> Vec<bool> {
    let mut rng = SimRng::stream(seed, PAYLOAD_STREAM);
    (0..bits).map(|_| rng.next_u64() >> 63 == 1).collect()
}

/// Tier drawn with the simulator probabilities, derived from the seed.
pub fn strength_from_seed(seed: u64) -> Strength {
    sample_strength(&mut SimRng::stream(seed, STRENGTH_STREAM))
}

/// A degraded default coded target with its ground truth.
pub struct CodedSequence {
    pub sim: SimulatedSequence,
    pub target: CodedTarget,
    pub clean: GrayImage,
}

/// Generates an 8x8 coded target from `seed` and degrades it. When
/// `strength` is `None` the tier is drawn from the seed.
pub fn simulate_coded(
    strength: Option<Strength>,
    n_frames: usize,
    seed: u64,
) -> Result<CodedSequence> {
    let target = CodedTarget::with_payload(payload_from_seed(seed, 64))?;
    let clean = generate_target(&target)?;
    let strength = strength.unwrap_or_else(|| strength_from_seed(seed));
    let sim = degrade_sequence(&clean, strength, n_frames, seed)?;
    Ok(CodedSequence { sim, target, clean })
}

impl SequenceMeta {
    pub fn for_simulation(sim: &SimulatedSequence, target: Option<&CodedTarget>) -> Self {
        Self {
            seed: sim.seed,
            strength: sim.params.strength.as_str().to_string(),
            n_frames: sim.frames.len(),
            params: Some(sim.params.clone()),
            target: target.map(TargetGeometry::of),
        }
    }
}

/// Writes frames, `meta.json` and, for coded targets, `payload.txt` into
/// `dir`, creating it if needed.
pub fn write_sequence_dir(
    dir: impl AsRef<Path>,
    frames: &FrameSequence,
    meta: &SequenceMeta,
    payload: Option<&[bool]>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_sequence(frames, dir)?;
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Metadata {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    if let Some(bits) = payload {
        let path = dir.join(PAYLOAD_FILE);
        fs::write(&path, format_bits(bits) + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads `meta.json` from a sequence directory.
pub fn read_meta(dir: impl AsRef<Path>) -> Result<SequenceMeta> {
    read_meta_file(dir.as_ref().join(META_FILE))
}

pub fn read_meta_file(path: impl AsRef<Path>) -> Result<SequenceMeta> {
    let path = path.as_ref().to_path_buf();
    if !path.is_file() {
        return Err(Error::NotFound(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metadata {
        path,
        detail: e.to_string(),
    })
}

pub fn read_payload(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bits(text.trim()).map_err(|e| Error::Metadata {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Metadata and ground truth of one sequence directory. Frames are loaded
/// separately with [`load_sequence`].
#[derive(Clone, Debug)]
pub struct SequenceEntry {
    pub id: String,
    pub dir: PathBuf,
    pub meta: SequenceMeta,
    /// Present when the metadata has a geometry and `payload.txt` exists.
    pub target: Option<CodedTarget>,
}

impl SequenceEntry {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta = read_meta(&dir)?;
        let payload_path = dir.join(PAYLOAD_FILE);
        let target = match meta.target {
            Some(geometry) if payload_path.is_file() => {
                let bits = read_payload(&payload_path)?;
                Some(geometry.with_payload(bits).map_err(|e| Error::Metadata {
                    path: payload_path,
                    detail: e.to_string(),
                })?)
            }
            _ => None,
        };
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            id,
            dir,
            meta,
            target,
        })
    }

    pub fn load_frames(&self) -> Result<FrameSequence> {
        load_sequence(&self.dir)
    }
}

/// Subdirectories of `root` that contain a `meta.json`, sorted by name.
pub fn list_sequences(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn payload_and_strength_are_seeded() {
        assert_eq!(payload_from_seed(9, 64), payload_from_seed(9, 64));
        assert_ne!(payload_from_seed(9, 64), payload_from_seed(10, 64));
        let ones = payload_from_seed(3, 4096).iter().filter(|&&b| b).count();
        assert!((1800..2300).contains(&ones));
        assert_eq!(strength_from_seed(5), strength_from_seed(5));
    }

    #[test]
    fn sequence_dir_roundtrip() {
        let tmp = tempdir().unwrap();
        let dir = tmp.path().join("seq_a");
        let coded = simulate_coded(Some(Strength::Weak), 3, 11).unwrap();
        let meta = SequenceMeta::for_simulation(&coded.sim, Some(&coded.target));
        write_sequence_dir(&dir, &coded.sim.frames, &meta, Some(&coded.target.payload)).unwrap();

        let entry = SequenceEntry::open(&dir).unwrap();
        assert_eq!(entry.id, "seq_a");
        assert_eq!(entry.meta, meta);
        assert_eq!(entry.target.as_ref(), Some(&coded.target));
        let frames = entry.load_frames().unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(list_sequences(tmp.path()).unwrap(), vec![dir]);
    }

    #[test]
    fn missing_payload_means_no_target() {
        let tmp = tempdir().unwrap();
        let coded = simulate_coded(Some(Strength::Strong), 1, 2).unwrap();
        let meta = SequenceMeta::for_simulation(&coded.sim, Some(&coded.target));
        write_sequence_dir(tmp.path(), &coded.sim.frames, &meta, None).unwrap();
        assert!(SequenceEntry::open(tmp.path()).unwrap().target.is_none());
    }

    #[test]
    fn bad_metadata_is_reported() {
        let tmp = tempdir().unwrap();
        assert!(matches!(read_meta(tmp.path()), Err(Error::NotFound(_))));
        fs::write(tmp.path().join(META_FILE), "{ not json").unwrap();
        assert!(matches!(read_meta(tmp.path()), Err(Error::Metadata { .. })));
        fs::write(tmp.path().join(PAYLOAD_FILE), "01x1").unwrap();
        assert!(matches!(
            read_payload(tmp.path().join(PAYLOAD_FILE)),
            Err(Error::Metadata { .. })
        ));
    }
}
