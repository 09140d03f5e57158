use proptest::prelude::*;
use rand::Rng;
use rsn_core::codec::{
    crop_transform, decode, encode_targets, flip_average, flip_permutation, Affine, BBox, DecodeConfig, HeatmapStack,
    Joint, KeypointSet, OffsetRule, TargetConfig, COCO_FLIP_PAIRS,
};
use rsn_core::rng::stream;

fn single(x: f64, y: f64) -> KeypointSet {
    KeypointSet::new(vec![Joint::new(x, y, 2)], BBox::new(0.0, 0.0, 1.0, 1.0))
}

/// Mean distance (heatmap cells) over random sub-cell centres rendered as targets.
fn mean_error(rule: OffsetRule, n: usize) -> f64 {
    let mut rng = stream(2024, &[]);
    let cfg = DecodeConfig {
        offset: rule,
        ..DecodeConfig::default()
    };
    let mut total = 0.0;
    for _ in 0..n {
        let (cx, cy) = (rng.gen_range(12.0..36.0), rng.gen_range(16.0..48.0));
        let (stack, _) = encode_targets(&single(cx * 4.0, cy * 4.0), (64, 48), &TargetConfig::default());
        let stack = HeatmapStack {
            transform: Affine::IDENTITY,
            ..stack
        };
        let k = decode(&stack, None, &[], 1.0, &cfg).unwrap();
        total += (k.joints[0].x - cx).hypot(k.joints[0].y - cy);
    }
    total / n as f64
}

#[test]
fn quarter_offset_beats_argmax() {
    let quarter = mean_error(OffsetRule::UnitQuarter, 1000);
    let argmax = mean_error(OffsetRule::None, 1000);
    assert!(quarter <= 0.5, "{quarter}");
    assert!(quarter < argmax, "{quarter} vs {argmax}");
}

#[test]
fn cell_centred_gaussian_decodes_close() {
    let (stack, _) = encode_targets(&single(80.0, 60.0), (64, 48), &TargetConfig::default());
    let k = decode(&stack, None, &[], 1.0, &DecodeConfig::default()).unwrap();
    let (x, y) = (k.joints[0].x / 4.0, k.joints[0].y / 4.0);
    assert!((x - 20.0).abs() <= 0.5 && (y - 15.0).abs() <= 0.5, "{x} {y}");
}

#[test]
fn encode_then_decode_through_a_crop() {
    let mut rng = stream(9, &[]);
    for _ in 0..50 {
        let bbox = BBox::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(40.0..120.0), rng.gen_range(40.0..160.0));
        let crop = crop_transform(&bbox, (256, 192), rng.gen_range(-45.0..45.0), rng.gen_range(0.7..1.35)).unwrap();
        let joints: Vec<Joint> = (0..17)
            .map(|_| {
                let (x, y) = (bbox.x + rng.gen_range(0.2..0.8) * bbox.w, bbox.y + rng.gen_range(0.2..0.8) * bbox.h);
                Joint::new(x, y, 2)
            })
            .collect();
        let image_kps = KeypointSet::new(joints, bbox);
        let crop_kps = image_kps.transformed(&crop);
        let (mut stack, mask) = encode_targets(&crop_kps, (64, 48), &TargetConfig::default());
        stack.transform = Affine::scale(4.0).then(&crop.inverse().unwrap());
        let cfg = DecodeConfig {
            blur: None,
            ..DecodeConfig::default()
        };
        let out = decode(&stack, None, &[], 1.0, &cfg).unwrap();
        for (c, (a, b)) in out.joints.iter().zip(&image_kps.joints).enumerate() {
            if mask[c] == 0.0 {
                continue;
            }
            let (ha, hb) = (crop_kps.joints[c], crop.apply(a.x, a.y));
            let err = ((ha.x - hb.0) / 4.0).abs().max(((ha.y - hb.1) / 4.0).abs());
            assert!(err <= 0.5 + 1e-9, "joint {c}: {err} cells ({b:?})");
        }
    }
}

#[test]
fn crop_round_trip() {
    let mut rng = stream(3, &[]);
    let t = crop_transform(&BBox::new(13.0, 7.0, 55.0, 90.0), (256, 192), 31.0, 1.2).unwrap();
    let inv = t.inverse().unwrap();
    for _ in 0..100 {
        let (x, y) = (rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
        let (u, v) = t.apply(x, y);
        let (bx, by) = inv.apply(u, v);
        assert!((bx - x).abs() < 1e-6 && (by - y).abs() < 1e-6);
    }
}

fn random_stack(rng: &mut impl Rng, k: usize, h: usize, w: usize) -> HeatmapStack {
    let values = (0..k * h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    HeatmapStack::new(k, h, w, values, Affine::IDENTITY).unwrap()
}

#[test]
fn flip_average_matches_loops() {
    let mut rng = stream(4, &[]);
    let (a, b) = (random_stack(&mut rng, 17, 6, 5), random_stack(&mut rng, 17, 6, 5));
    let out = flip_average(&a, &b, &COCO_FLIP_PAIRS).unwrap();
    let mut swap: Vec<usize> = (0..17).collect();
    for (l, r) in COCO_FLIP_PAIRS {
        swap[l] = r;
        swap[r] = l;
    }
    for c in 0..17 {
        for y in 0..6 {
            for x in 0..5 {
                let expect = (a.at(c, y, x) + b.at(swap[c], y, 4 - x)) / 2.0;
                assert_eq!(out.at(c, y, x), expect);
            }
        }
    }
}

#[test]
fn flip_average_of_constants_and_identity() {
    let a = HeatmapStack::new(2, 3, 3, vec![0.2; 18], Affine::IDENTITY).unwrap();
    let b = HeatmapStack::new(2, 3, 3, vec![0.6; 18], Affine::IDENTITY).unwrap();
    let out = flip_average(&a, &b, &[(0, 1)]).unwrap();
    assert!(out.values.iter().all(|v| (v - 0.4).abs() < 1e-7));
    let mut rng = stream(5, &[]);
    let h = random_stack(&mut rng, 3, 4, 4);
    assert_eq!(flip_average(&h, &h.mirrored(), &[]).unwrap(), h);
}

#[test]
fn flip_average_is_idempotent_on_symmetric_stacks() {
    let mut rng = stream(6, &[]);
    let h = random_stack(&mut rng, 3, 5, 6);
    let m = h.mirrored();
    let sym = HeatmapStack {
        values: h.values.iter().zip(&m.values).map(|(a, b)| (a + b) / 2.0).collect(),
        ..h
    };
    assert_eq!(sym.mirrored(), sym);
    assert_eq!(flip_average(&sym, &sym, &[]).unwrap(), sym);
}

#[test]
fn flipped_prediction_recovers_swapped_joints() {
    // A stack and its mirror-image prediction with swapped labels average to the same joints.
    let k = KeypointSet::new(
        (0..17).map(|i| Joint::new(20.0 + 6.0 * i as f64, 30.0 + 8.0 * (i % 5) as f64, 2)).collect(),
        BBox::new(0.0, 0.0, 192.0, 256.0),
    );
    let (h, _) = encode_targets(&k, (64, 48), &TargetConfig::default());
    let mut flipped_kps = k.swapped(&COCO_FLIP_PAIRS).unwrap();
    for j in &mut flipped_kps.joints {
        j.x = 47.0 * 4.0 - j.x;
    }
    let (hf, _) = encode_targets(&flipped_kps, (64, 48), &TargetConfig::default());
    let avg = flip_average(&h, &hf, &COCO_FLIP_PAIRS).unwrap();
    assert!(avg.values.iter().zip(&h.values).all(|(a, b)| (a - b).abs() < 1e-6));
    assert!(flip_permutation(&COCO_FLIP_PAIRS, 17).is_ok());
}

#[test]
fn unmatched_layouts_rejected() {
    let a = HeatmapStack::zeros(2, 3, 3);
    let b = HeatmapStack::zeros(2, 3, 4);
    assert!(flip_average(&a, &b, &[]).is_err());
}

proptest! {
    #[test]
    fn pose_score_stays_in_unit_interval(values in prop::collection::vec(0.0f32..=1.0, 2 * 4 * 4), box_score in 0.0f64..=1.0, flip in any::<bool>()) {
        let h = HeatmapStack::new(2, 4, 4, values, Affine::IDENTITY).unwrap();
        let f = h.mirrored();
        let k = decode(&h, flip.then_some(&f), &[(0, 1)], box_score, &DecodeConfig::default()).unwrap();
        let s = k.pose_score();
        prop_assert!((0.0..=1.0).contains(&s));
        for j in &k.joints {
            prop_assert!((0.0..=1.0).contains(&j.score));
        }
    }
}
