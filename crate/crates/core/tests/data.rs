use proptest::prelude::*;
use rsn_core::codec::{BBox, Joint, KeypointSet, COCO_FLIP_PAIRS};
use rsn_core::data::{
    augment, crop_sample, epoch_order, sample_rng, synth_annotations, synth_generate, synth_sample, AugmentConfig, Image,
    Record, SynthConfig,
};

fn cfg() -> AugmentConfig {
    AugmentConfig::new((96, 64), &COCO_FLIP_PAIRS)
}

#[test]
fn generation_is_deterministic() {
    let c = SynthConfig::default();
    assert_eq!(synth_sample(11, 5, &c), synth_sample(11, 5, &c));
    assert_ne!(synth_sample(11, 5, &c).image, synth_sample(11, 6, &c).image);
    let batch = synth_generate(11, 8, &c);
    assert_eq!(batch[5], synth_sample(11, 5, &c));
}

#[test]
fn generated_joints_are_visible_and_inside() {
    let c = SynthConfig::default();
    for r in synth_generate(3, 64, &c) {
        assert_eq!(r.keypoints.joints.len(), 17);
        for j in &r.keypoints.joints {
            assert_eq!(j.visibility, 2);
            assert!(j.x >= 0.0 && j.y >= 0.0 && j.x < c.canvas.1 as f64 && j.y < c.canvas.0 as f64);
        }
        // Front-facing: anatomical left towards +x.
        assert!(r.keypoints.joints[5].x > r.keypoints.joints[6].x);
        assert!(r.keypoints.joints[11].x > r.keypoints.joints[12].x);
        assert!(r.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn annotations_mirror_the_records() {
    let recs = synth_generate(2, 4, &SynthConfig::default());
    let (images, anns) = synth_annotations(&recs);
    assert_eq!(images.len(), 4);
    assert_eq!(anns[2].keypoints, recs[2].keypoints);
    assert_eq!(anns[2].num_keypoints(), 17);
    assert_eq!((images[1].width, images[1].height), (96, 128));
}

#[test]
fn plain_crop_is_scale_and_translate() {
    let rec: Record = synth_sample(4, 0, &SynthConfig::default()).into();
    let s = crop_sample(&rec, &cfg(), 0.0, 1.0, false).unwrap();
    let [a, b, _, d, e, _] = s.meta.transform.0;
    assert!(b.abs() < 1e-12 && d.abs() < 1e-12 && (a - e).abs() < 1e-12 && a > 0.0);
    for (o, n) in rec.keypoints.joints.iter().zip(&s.keypoints.joints) {
        let (x, y) = s.meta.transform.apply(o.x, o.y);
        assert!((x - n.x).abs() < 1e-9 && (y - n.y).abs() < 1e-9);
    }
}

#[test]
fn double_flip_restores_labels() {
    let k = synth_sample(5, 0, &SynthConfig::default()).keypoints;
    assert_eq!(k.swapped(&COCO_FLIP_PAIRS).unwrap().swapped(&COCO_FLIP_PAIRS).unwrap(), k);
}

#[test]
fn flipped_crop_swaps_labels() {
    let rec: Record = synth_sample(6, 0, &SynthConfig::default()).into();
    let plain = crop_sample(&rec, &cfg(), 0.0, 1.0, false).unwrap();
    let flipped = crop_sample(&rec, &cfg(), 0.0, 1.0, true).unwrap();
    assert!(flipped.meta.flipped);
    // The joint labelled left shoulder after the flip is the mirrored right shoulder.
    let (l, r) = (&flipped.keypoints.joints[5], &plain.keypoints.joints[6]);
    assert!((l.x - (63.0 - r.x)).abs() < 1e-9 && (l.y - r.y).abs() < 1e-9);
    assert!(flipped.keypoints.joints[5].x > flipped.keypoints.joints[6].x);
}

/// Source image with a bright blob at every joint, one joint per channel.
fn marker_record(k: &KeypointSet, h: usize, w: usize) -> Record {
    let mut img = Image::new(k.joints.len(), h, w);
    for (c, j) in k.joints.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - j.x).powi(2) + (y as f64 - j.y).powi(2);
                img.set(c, y, x, (-d2 / (2.0 * 1.5 * 1.5)).exp() as f32);
            }
        }
    }
    Record {
        source_id: 0,
        image: img,
        keypoints: k.clone(),
    }
}

#[test]
fn warped_markers_land_on_transformed_joints() {
    let base = synth_sample(7, 0, &SynthConfig::default()).keypoints;
    let rec = marker_record(&base, 128, 96);
    let c = AugmentConfig::new((96, 64), &[]);
    for i in 0..20 {
        let s = augment(&rec, &mut sample_rng(7, 0, i), &c).unwrap();
        for (ch, j) in s.keypoints.joints.iter().enumerate() {
            if j.visibility == 0 || j.x < 2.0 || j.y < 2.0 || j.x > 61.0 || j.y > 93.0 {
                continue;
            }
            // Brightest pixel of the joint's channel near the annotation.
            let (cx, cy) = (j.x.round() as i64, j.y.round() as i64);
            let mut best = (f32::MIN, 0i64, 0i64);
            for y in (cy - 3).max(0)..=(cy + 3).min(95) {
                for x in (cx - 3).max(0)..=(cx + 3).min(63) {
                    let v = s.image.at(ch, y as usize, x as usize);
                    if v > best.0 {
                        best = (v, x, y);
                    }
                }
            }
            let err = ((best.1 as f64 - j.x).powi(2) + (best.2 as f64 - j.y).powi(2)).sqrt();
            assert!(err <= 1.0, "sample {i} joint {ch}: {err}");
        }
    }
}

#[test]
fn epoch_order_is_a_pure_permutation() {
    let a = epoch_order(1, 3, 32);
    assert_eq!(a, epoch_order(1, 3, 32));
    assert_ne!(a, epoch_order(1, 4, 32));
    let mut s = a.clone();
    s.sort();
    assert_eq!(s, (0..32).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn augmentation_keeps_joint_count_and_in_crop_visibility(seed in any::<u64>(), index in 0usize..64) {
        let rec: Record = synth_sample(seed % 4, index, &SynthConfig::default()).into();
        let s = augment(&rec, &mut sample_rng(seed, 0, index), &cfg()).unwrap();
        prop_assert_eq!(s.keypoints.joints.len(), 17);
        for j in &s.keypoints.joints {
            let inside = j.x >= 0.0 && j.y >= 0.0 && j.x <= 63.0 && j.y <= 95.0;
            prop_assert_eq!(j.visibility == 2, inside);
        }
    }
}

#[test]
fn degenerate_box_is_an_error() {
    let rec = Record {
        source_id: 0,
        image: Image::new(3, 8, 8),
        keypoints: KeypointSet::new(vec![Joint::new(1.0, 1.0, 2)], BBox::new(0.0, 0.0, 0.0, 0.0)),
    };
    assert!(crop_sample(&rec, &cfg(), 0.0, 1.0, false).is_err());
}
