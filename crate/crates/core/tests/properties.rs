use earseg::evaluation::{confusion, evaluate_masks};
use earseg::network::{decode_params, encode_params};
use earseg::ops::{maxpool2x2, softmax_channels, unpool2x2};
use earseg::postprocess::{connected_components, postprocess_mask, Connectivity};
use earseg::training::{class_frequencies, median_frequency_weights, weighted_cross_entropy, ClassWeights};
use earseg::{build_default_spec, LabelMask, NetworkParams, Shape, Tensor};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = LabelMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..=1, w * h).prop_map(move |d| LabelMask::from_vec(w, h, d).unwrap())
    })
}

fn mask_pair(max: usize) -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let m = move || proptest::collection::vec(0u8..=1, w * h).prop_map(move |d| LabelMask::from_vec(w, h, d).unwrap());
        (m(), m())
    })
}

fn tensor_strategy(c: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=2usize, 1..=9usize, 1..=9usize).prop_flat_map(move |(n, h, w)| {
        proptest::collection::vec(-50.0..50.0f64, n * c * h * w)
            .prop_map(move |d| Tensor::from_vec(Shape::new(n, c, h, w), d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in tensor_strategy(2)) {
        let p = softmax_channels(&x);
        let s = p.shape();
        for n in 0..s.n {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let a = p.at(n, 0, y, xx);
                    let b = p.at(n, 1, y, xx);
                    prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
                    prop_assert!((a + b - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn unpool_keeps_one_value_per_window(x in tensor_strategy(3)) {
        let (y, idx) = maxpool2x2(&x);
        let up = unpool2x2(&y, &idx).unwrap();
        let s = x.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                for wy in 0..s.h.div_ceil(2) {
                    for wx in 0..s.w.div_ceil(2) {
                        let nonzero = (2 * wy..(2 * wy + 2).min(s.h))
                            .flat_map(|yy| (2 * wx..(2 * wx + 2).min(s.w)).map(move |xx| (yy, xx)))
                            .filter(|&(yy, xx)| up.at(n, c, yy, xx) != 0.0)
                            .count();
                        prop_assert!(nonzero <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn postprocess_output_is_a_small_subset(m in mask_strategy(20), eight in any::<bool>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let out = postprocess_mask(&m, conn);
        prop_assert!(out.is_subset_of(&m));
        prop_assert!(connected_components(&out, conn).region_count() <= 2);
        prop_assert_eq!(postprocess_mask(&out, conn), out.clone());
        let before = connected_components(&m, conn).region_count();
        prop_assert_eq!(connected_components(&out, conn).region_count(), before.min(2));
    }

    #[test]
    fn metrics_are_bounded((gt, pred) in mask_pair(16)) {
        let c = confusion(&gt, &pred).unwrap();
        prop_assert_eq!(c.all() as usize, gt.len());
        let m = evaluate_masks(&gt, &pred).unwrap();
        for v in m.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // overlap = 2·IoU / (1 + IoU)
        prop_assert!((m.overlap - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
    }

    #[test]
    fn weight_ratio_inverts_frequency_ratio(masks in proptest::collection::vec(mask_strategy(12), 1..6)) {
        if let Ok((f_non, f_ear)) = class_frequencies(masks.iter()) {
            let w = median_frequency_weights(masks.iter()).unwrap();
            let lhs = w.non_ear / w.ear;
            let rhs = f_ear / f_non;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn loss_is_non_negative(x in tensor_strategy(2), seed in any::<u64>(), we in 0.1..50.0f64) {
        let s = x.shape();
        let targets: Vec<LabelMask> = (0..s.n)
            .map(|n| LabelMask::from_fn(s.w, s.h, |xx, y| (seed >> ((n * 7 + xx * 3 + y) % 64)) & 1 == 1))
            .collect();
        let refs: Vec<&LabelMask> = targets.iter().collect();
        let w = ClassWeights { non_ear: 0.5, ear: we };
        let (loss, grad) = weighted_cross_entropy(&softmax_channels(&x), &refs, w).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert!(grad.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weight_container_round_trips(scale in 0.02..0.2f64, seed in any::<u64>()) {
        let spec = build_default_spec(scale);
        let p = NetworkParams::<f32>::init(&spec, seed);
        let bytes = encode_params(&p);
        let back = decode_params::<f32>(&bytes, &spec).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(encode_params(&back), bytes);
    }
}
