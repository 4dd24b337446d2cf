//! Property tests over randomly generated inputs.

use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;

use nocturne_core::archive::TensorArchive;
use nocturne_core::curve::{apply_curve, apply_curve_step, CurveParameterMaps};
use nocturne_core::image::ImageTensor;
use nocturne_core::losses::{
    color_constancy_loss, exposure_loss, illumination_smoothness_loss,
    spatial_consistency_loss, ExposureConfig, SpatialConfig,
};
use nocturne_core::prior::make_sample_pair;
use nocturne_core::vlm::binary_similarity;

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    proptest::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |v| {
        ImageTensor::new(Array3::from_shape_vec((h, w, 3), v).unwrap()).unwrap()
    })
}

fn alpha_strategy(h: usize, w: usize) -> impl Strategy<Value = Array3<f32>> {
    proptest::collection::vec(-1.0f32..=1.0, h * w * 3)
        .prop_map(move |v| Array3::from_shape_vec((h, w, 3), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_step_stays_in_range(img in image_strategy(4, 5), alpha in alpha_strategy(4, 5)) {
        let out = apply_curve_step(&img, &alpha).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn curve_step_monotone_in_alpha(img in image_strategy(3, 3), alpha in alpha_strategy(3, 3)) {
        let bumped = alpha.mapv(|a| (a + 0.2).min(1.0));
        let lo = apply_curve_step(&img, &alpha).unwrap();
        let hi = apply_curve_step(&img, &bumped).unwrap();
        for (a, b) in lo.data().iter().zip(hi.data().iter()) {
            prop_assert!(b >= &(a - 1e-6));
        }
    }

    #[test]
    fn iterated_curve_preserves_range(img in image_strategy(3, 4), alpha in alpha_strategy(3, 4)) {
        let maps = CurveParameterMaps::new(ndarray::stack![
            ndarray::Axis(0), alpha.view(), alpha.view(), alpha.view()
        ]).unwrap();
        let out = apply_curve(&img, &maps).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn losses_are_nonnegative(enh in image_strategy(8, 8), inp in image_strategy(8, 8)) {
        let e = exposure_loss(&enh, &ExposureConfig { patch_size: 4, target: 0.6 }).unwrap();
        prop_assert!(e.value() >= 0.0);
        let s = spatial_consistency_loss(&enh, &inp, &SpatialConfig::default()).unwrap();
        prop_assert!(s.value() >= 0.0);
        let c = color_constancy_loss(&enh).unwrap();
        prop_assert!(c.value() >= 0.0);
    }

    #[test]
    fn spatial_loss_of_image_with_itself_is_zero(img in image_strategy(8, 8)) {
        let l = spatial_consistency_loss(&img, &img, &SpatialConfig::default()).unwrap();
        prop_assert_eq!(l.value(), 0.0);
    }

    #[test]
    fn smoothness_nonnegative_and_zero_on_constant(
        v in -1.0f32..=1.0,
        alpha in proptest::collection::vec(-1.0f32..=1.0, 2 * 4 * 4 * 3),
    ) {
        let maps = CurveParameterMaps::new(
            Array4::from_shape_vec((2, 4, 4, 3), alpha).unwrap()
        ).unwrap();
        prop_assert!(illumination_smoothness_loss(&maps).unwrap().value() >= 0.0);
        let flat = CurveParameterMaps::new(Array4::from_elem((2, 4, 4, 3), v)).unwrap();
        prop_assert_eq!(illumination_smoothness_loss(&flat).unwrap().value(), 0.0);
    }

    #[test]
    fn head_probabilities_complement(
        img in proptest::collection::vec(-1.0f32..=1.0, 8),
        pos in proptest::collection::vec(-1.0f32..=1.0, 8),
        neg in proptest::collection::vec(-1.0f32..=1.0, 8),
    ) {
        prop_assume!(img.iter().any(|v| v.abs() > 0.1));
        prop_assume!(pos.iter().any(|v| v.abs() > 0.1));
        prop_assume!(neg.iter().any(|v| v.abs() > 0.1));
        let a = binary_similarity(&img, &pos, &neg).unwrap();
        let b = binary_similarity(&img, &neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-5);
        prop_assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn sample_pair_shapes_match(img in image_strategy(8, 12)) {
        let pair = make_sample_pair(&img, 4).unwrap();
        prop_assert_eq!(
            (pair.positive.height(), pair.positive.width()),
            (pair.negative.height(), pair.negative.width())
        );
        prop_assert_eq!(pair.positive.height(), 2);
        prop_assert_eq!(pair.positive.width(), 3);
    }

    #[test]
    fn archive_round_trips(values in proptest::collection::vec(-1e6f32..=1e6, 1..64)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ntar");
        let mut archive = TensorArchive::new();
        let n = values.len();
        archive.insert("x", ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), values).unwrap());
        archive.write(&path).unwrap();
        let back = TensorArchive::read(&path).unwrap();
        prop_assert_eq!(archive, back);
    }

    #[test]
    fn prompt_matrices_survive_checkpointing(
        vals in proptest::collection::vec(-0.1f32..=0.1, 3 * 8),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ntar");
        let mut pair = nocturne_core::prior::LearnedPromptPair::init(3, 8, 0).unwrap();
        pair.positive = Array2::from_shape_vec((3, 8), vals).unwrap();
        pair.save(&path).unwrap();
        let back = nocturne_core::prior::LearnedPromptPair::load(&path).unwrap();
        prop_assert_eq!(pair, back);
    }
}
