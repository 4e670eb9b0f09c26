use proptest::prelude::*;

use turbfuse::codec::{bit_score, decode_target, generate_target, CodedTarget};
use turbfuse::deblur::{gaussian_psf, wiener_deconvolve};
use turbfuse::imgio::{load_image, save_image, FrameSequence, GrayImage};
use turbfuse::postprocess::{contrast_stretch, local_envelope, suppress_ringing};
use turbfuse::registration::{estimate_flow, register_sequence, warp, FlowField, FlowParams};
use turbfuse::selection::sharpness;
use turbfuse::simulator::{
    correlated_tilt_field, degrade_frame, sample_params, SimRng, Strength, CORR_CHOICES,
};

fn image(width: usize, height: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..=1.0, width * height)
        .prop_map(move |data| GrayImage::new(width, height, data).unwrap())
}

fn payload() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 64)
}

fn envelope_violation(img: &GrayImage, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    img.data()
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&m, &big_m))| (v - big_m).max(0.0) + (m - v).max(0.0))
        .collect()
}

fn smooth_scene(seed: u64, w: usize, h: usize) -> GrayImage {
    turbfuse::charts::blob_scene(w, h, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn codec_roundtrip(bits in payload()) {
        let t = CodedTarget::with_payload(bits.clone()).unwrap();
        let img = generate_target(&t).unwrap();
        prop_assert_eq!(decode_target(&img, &t).unwrap(), bits);
    }

    #[test]
    fn codec_affine_invariant(bits in payload(), scale in 0.01f64..5.0, offset in -2.0f64..2.0) {
        let t = CodedTarget::with_payload(bits.clone()).unwrap();
        let img = generate_target(&t).unwrap().map(|v| scale * v + offset);
        prop_assert_eq!(decode_target(&img, &t).unwrap(), bits);
    }

    #[test]
    fn bit_score_symmetric_hamming(a in payload(), b in payload()) {
        let s = bit_score(&a, &b).unwrap();
        prop_assert_eq!(s, bit_score(&b, &a).unwrap());
        let hamming = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        prop_assert!((s - (1.0 - hamming as f64 / 64.0)).abs() < 1e-15);
    }

    #[test]
    fn stretch_is_monotone(img in image(12, 9), lo in 0.0f64..40.0, span in 1.0f64..60.0) {
        let out = contrast_stretch(&img, lo, (lo + span).min(100.0)).unwrap();
        let (a, b) = (img.data(), out.data());
        for i in 0..a.len() {
            for j in 0..a.len() {
                if a[i] <= a[j] {
                    prop_assert!(b[i] <= b[j]);
                }
            }
        }
        prop_assert!(out.in_unit_range());
    }

    #[test]
    fn ringing_never_increases_violation(
        guide in image(16, 12),
        noise in prop::collection::vec(-0.5f64..0.5, 16 * 12),
        blend in 0.0f64..=1.0,
        radius in 1usize..5,
    ) {
        let deblurred = GrayImage::new(
            16,
            12,
            guide.data().iter().zip(&noise).map(|(g, n)| g + n).collect(),
        )
        .unwrap();
        let out = suppress_ringing(&deblurred, &guide, blend, radius).unwrap();
        let (lo, hi) = local_envelope(&guide, radius);
        let before = envelope_violation(&deblurred, &lo, &hi);
        let after = envelope_violation(&out, &lo, &hi);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn png_roundtrip_of_quantized_images(bytes in prop::collection::vec(any::<u8>(), 7 * 5)) {
        let img = GrayImage::new(7, 5, bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_image(&img, &path).unwrap();
        prop_assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn zero_flow_warp_is_identity(img in image(9, 7)) {
        prop_assert_eq!(warp(&img, &FlowField::zeros(9, 7)).unwrap(), img);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_params_inside_table(seed in any::<u64>()) {
        let mut rng = SimRng::new(seed);
        for strength in Strength::ALL {
            let p = sample_params(strength, &mut rng);
            let (d_lo, d_hi) = strength.aperture_range();
            let (z_lo, z_hi) = strength.distance_range();
            prop_assert!(p.aperture_d >= d_lo && p.aperture_d <= d_hi);
            prop_assert!(p.distance >= z_lo && p.distance <= z_hi);
            prop_assert!(strength.d_over_r0_choices().contains(&p.d_over_r0));
            prop_assert!(CORR_CHOICES.contains(&p.corr));
            prop_assert_eq!(p.kernel_size, 33);
        }
    }

    #[test]
    fn degraded_frames_stay_in_range(seed in any::<u64>()) {
        let clean = smooth_scene(seed, 40, 40);
        let mut rng = SimRng::new(seed);
        let params = sample_params(Strength::Strong, &mut rng);
        let f = degrade_frame(&clean, &params, &mut rng).unwrap();
        prop_assert!(f.is_finite() && f.in_unit_range());
    }

    #[test]
    fn tilt_field_has_requested_rms(seed in any::<u64>(), corr_index in 0usize..4) {
        let f = correlated_tilt_field(48, 40, CORR_CHOICES[corr_index], 1.5, &mut SimRng::new(seed)).unwrap();
        let n = f.dx().len() as f64;
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        prop_assert!((rms(f.dx()) - 1.5).abs() < 1e-9);
        prop_assert!((rms(f.dy()) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn wiener_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, nsr in 0.0f64..0.1) {
        let f = smooth_scene(seed, 40, 36);
        let g = smooth_scene(seed.wrapping_add(1), 40, 36);
        let psf = gaussian_psf(1.3, 9).unwrap();
        let mix = GrayImage::new(40, 36, f.data().iter().zip(g.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = wiener_deconvolve(&mix, &psf, nsr).unwrap();
        let df = wiener_deconvolve(&f, &psf, nsr).unwrap();
        let dg = wiener_deconvolve(&g, &psf, nsr).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * df.data()[i] + b * dg.data()[i];
            prop_assert!((lhs.data()[i] - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_frames_give_small_flow(seed in any::<u64>()) {
        let f = turbfuse::charts::textured_checkerboard(48, 48, 8, seed);
        let est = estimate_flow(&f, &f, &FlowParams::default()).unwrap();
        prop_assert!(est.field.mean_magnitude() < 0.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// The reference is a mean, so only summation order changes under a
    /// permutation; outputs agree to rounding.
    #[test]
    fn registration_is_permutation_covariant(seed in any::<u64>(), perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
        let clean = turbfuse::charts::textured_checkerboard(40, 40, 8, seed);
        let mut rng = SimRng::new(seed);
        let params = sample_params(Strength::Weak, &mut rng);
        let frames: Vec<GrayImage> = (0..5).map(|_| degrade_frame(&clean, &params, &mut rng).unwrap()).collect();
        let shuffled: Vec<GrayImage> = perm.iter().map(|&i| frames[i].clone()).collect();
        let flow_params = FlowParams::default();
        let a = register_sequence(&FrameSequence::new(frames).unwrap(), &flow_params, 2).unwrap();
        let b = register_sequence(&FrameSequence::new(shuffled).unwrap(), &flow_params, 2).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            let diff = a.frames[i]
                .data()
                .iter()
                .zip(b.frames[k].data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            prop_assert!(diff < 1e-9, "frame {i}: {diff}");
        }
    }

    #[test]
    fn blur_lowers_sharpness(seed in any::<u64>()) {
        let img = turbfuse::charts::textured_checkerboard(48, 48, 8, seed);
        let mut prev = sharpness(&img).unwrap();
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let s = sharpness(&turbfuse::filter::gaussian_blur(&img, sigma)).unwrap();
            prop_assert!(s < prev);
            prev = s;
        }
    }
}
