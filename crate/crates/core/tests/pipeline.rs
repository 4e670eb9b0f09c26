use turbfuse::codec::{bit_score, decode_target, generate_target, CodedTarget};
use turbfuse::dataset::{simulate_coded, write_sequence_dir, SequenceMeta};
use turbfuse::deblur::ClassicalDeblurrer;
use turbfuse::eval::{evaluate_dataset, raw_scores, EvalOptions, EvalReport};
use turbfuse::imgio::{load_raw, save_raw, FrameSequence};
use turbfuse::pipeline::{deblur_and_refine, restore_sequence, PipelineConfig};
use turbfuse::selection::sharpness;
use turbfuse::simulator::{degrade_sequence, Strength};
use turbfuse::Error;

fn mean_sharpness(frames: &FrameSequence) -> f64 {
    frames.iter().map(|f| sharpness(f).unwrap()).sum::<f64>() / frames.len() as f64
}

#[test]
fn identical_clean_frames_decode_exactly() {
    let target = CodedTarget::with_payload((0..64).map(|i| (i * 7) % 3 == 0).collect()).unwrap();
    let clean = generate_target(&target).unwrap();
    let frames = FrameSequence::new(vec![clean; 100]).unwrap();
    let r = restore_sequence(&frames, &PipelineConfig::default()).unwrap();
    let decoded = decode_target(&r.output, &target).unwrap();
    assert_eq!(bit_score(&decoded, &target.payload).unwrap(), 1.0);
}

#[test]
fn dumped_fused_image_reproduces_output() {
    let coded = simulate_coded(Some(Strength::Medium), 12, 4).unwrap();
    let config = PipelineConfig::default();
    let r = restore_sequence(&coded.sim.frames, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fused.f64");
    save_raw(r.fused(), &path).unwrap();
    let fused = load_raw(&path).unwrap();
    let deblurrer = ClassicalDeblurrer {
        params: config.deblur.clone(),
        psf: None,
    };
    let (deblurred, output) = deblur_and_refine(&fused, &config, &deblurrer).unwrap();
    assert_eq!(deblurred.image, r.deblurred.image);
    assert_eq!(output, r.output);
}

#[test]
fn every_stage_stays_finite_and_output_in_range() {
    for (seed, strength) in [
        (1, Strength::Weak),
        (2, Strength::Medium),
        (3, Strength::Strong),
    ] {
        let coded = simulate_coded(Some(strength), 10, seed).unwrap();
        let r = restore_sequence(&coded.sim.frames, &PipelineConfig::default()).unwrap();
        assert!(r.registered.frames.iter().all(|f| f.is_finite()));
        assert!(r.reference().is_finite());
        assert!(r.fused().is_finite());
        assert!(r.deblurred.image.is_finite());
        assert!(r.output.is_finite() && r.output.in_unit_range());
    }
}

#[test]
fn weak_tier_restored_score_not_below_raw_mean() {
    let config = PipelineConfig::default();
    let (mut raw, mut restored) = (0.0, 0.0);
    for seed in 0..20 {
        let coded = simulate_coded(Some(Strength::Weak), 16, 100 + seed).unwrap();
        raw += raw_scores(&coded.sim.frames, &coded.target).unwrap().0;
        let r = restore_sequence(&coded.sim.frames, &config).unwrap();
        let decoded = decode_target(&r.output, &coded.target).unwrap();
        restored += bit_score(&decoded, &coded.target.payload).unwrap();
    }
    assert!(restored >= raw, "restored {restored} < raw {raw}");
}

#[test]
fn strong_frames_are_less_sharp_than_weak() {
    let clean = turbfuse::charts::textured_checkerboard(96, 96, 12, 0);
    for seed in 0..4 {
        let weak = degrade_sequence(&clean, Strength::Weak, 6, seed).unwrap();
        let strong = degrade_sequence(&clean, Strength::Strong, 6, seed).unwrap();
        assert!(mean_sharpness(&strong.frames) < mean_sharpness(&weak.frames));
    }
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let coded = simulate_coded(Some(Strength::Weak), 3, 0).unwrap();
    let mut config = PipelineConfig::default();
    config.selection.keep_fraction = 1.5;
    assert!(matches!(
        restore_sequence(&coded.sim.frames, &config),
        Err(Error::InvalidParameter(_)) | Err(Error::Config(_))
    ));
}

fn write_dataset(root: &std::path::Path) {
    for (i, strength) in [Strength::Weak, Strength::Strong, Strength::Medium]
        .into_iter()
        .enumerate()
    {
        let coded = simulate_coded(Some(strength), 8, 40 + i as u64).unwrap();
        let meta = SequenceMeta::for_simulation(&coded.sim, Some(&coded.target));
        write_sequence_dir(
            root.join(format!("seq_{i:04}")),
            &coded.sim.frames,
            &meta,
            Some(&coded.target.payload),
        )
        .unwrap();
    }
}

#[test]
fn evaluation_report_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let config = PipelineConfig::default();
    let a = evaluate_dataset(dir.path(), &config, &EvalOptions::default()).unwrap();
    let b = evaluate_dataset(dir.path(), &config, &EvalOptions::default()).unwrap();
    let json = a.to_json().unwrap();
    assert_eq!(json, b.to_json().unwrap());

    assert_eq!(a.sequences.len(), 3);
    assert!(a.sequences.iter().all(|s| s.error.is_none()));
    let tiers: Vec<&str> = a.tiers.iter().map(|t| t.strength.as_str()).collect();
    assert_eq!(tiers, ["weak", "medium", "strong"]);

    let path = dir.path().join("report.json");
    a.write(&path).unwrap();
    let back = EvalReport::read(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_json().unwrap(), json);
}

#[test]
fn broken_sequence_is_reported_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    std::fs::remove_file(dir.path().join("seq_0001").join("frame_0003.png")).unwrap();
    std::fs::write(
        dir.path().join("seq_0001").join("frame_0003.png"),
        b"not a png",
    )
    .unwrap();
    let report = evaluate_dataset(
        dir.path(),
        &PipelineConfig::default(),
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.sequences.len(), 3);
    assert!(report.sequences[1].error.is_some());
    assert!(report.sequences[0].error.is_none() && report.sequences[2].error.is_none());
}

#[test]
fn readme_config_block_matches_defaults() {
    let readme =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
    let end = start + readme[start..].find("```").unwrap();
    let config = PipelineConfig::from_toml_str(&readme[start..end]).unwrap();
    assert_eq!(config, PipelineConfig::default());
    assert_eq!(
        PipelineConfig::from_toml_str("").unwrap(),
        PipelineConfig::default()
    );
}
