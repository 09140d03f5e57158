//! Synthetic stick figures, annotation records and the augmentation pipeline.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{crop_transform, Affine, BBox, KeypointSet};
use crate::rng::stream;
use crate::Result;

mod image;
mod synth;

pub use image::{mirror_transform, Image};
pub use synth::{synth_generate, synth_sample, SynthConfig, SynthRecord};

const EPOCH_TAG: u64 = 0x6570_6f63;
const AUGMENT_TAG: u64 = 0x6175_676d;

/// COCO-style image entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

/// COCO-style person annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub keypoints: KeypointSet,
    pub area: f64,
    pub crowd: bool,
}

impl Annotation {
    pub fn num_keypoints(&self) -> usize {
        self.keypoints.joints.iter().filter(|j| j.labeled()).count()
    }
}

/// An annotated person inside an image, before cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub source_id: u64,
    pub image: Image,
    pub keypoints: KeypointSet,
}

impl From<SynthRecord> for Record {
    fn from(r: SynthRecord) -> Self {
        Record {
            source_id: r.index as u64,
            image: r.image,
            keypoints: r.keypoints,
        }
    }
}

/// How a sample was cut out of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub source_id: u64,
    /// Source image pixels to crop pixels, mirror included.
    pub transform: Affine,
    pub flipped: bool,
}

/// A network-ready crop with keypoints in crop pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub keypoints: KeypointSet,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Network input `(H, W)`.
    pub input: (usize, usize),
    /// Rotation drawn uniformly from `[-max_rotation, max_rotation]` degrees.
    pub max_rotation: f64,
    pub scale: (f64, f64),
    pub flip_prob: f64,
    /// Box growth before the aspect correction.
    pub padding: f64,
    pub flip_pairs: Vec<(usize, usize)>,
}

impl AugmentConfig {
    pub fn new(input: (usize, usize), flip_pairs: &[(usize, usize)]) -> Self {
        AugmentConfig {
            input,
            max_rotation: 45.0,
            scale: (0.7, 1.35),
            flip_prob: 0.5,
            padding: 1.25,
            flip_pairs: flip_pairs.to_vec(),
        }
    }

    /// Crop only: no rotation, unit scale, no flip.
    pub fn plain(&self) -> Self {
        AugmentConfig {
            max_rotation: 0.0,
            scale: (1.0, 1.0),
            flip_prob: 0.0,
            ..self.clone()
        }
    }
}

/// Crop `record` with explicit parameters.
pub fn crop_sample(record: &Record, cfg: &AugmentConfig, rotation: f64, scale: f64, flip: bool) -> Result<Sample> {
    let (h, w) = cfg.input;
    let bbox: BBox = record.keypoints.bbox.padded(cfg.padding);
    let mut t = crop_transform(&bbox, cfg.input, rotation, scale)?;
    if flip {
        t = t.then(&mirror_transform(w));
    }
    let image = record.image.warp(&t, h, w)?;
    let mut keypoints = record.keypoints.transformed(&t);
    keypoints.bbox = transformed_box(&record.keypoints.bbox, &t);
    if flip {
        keypoints = keypoints.swapped(&cfg.flip_pairs)?;
    }
    for j in &mut keypoints.joints {
        let inside = j.x >= 0.0 && j.y >= 0.0 && j.x <= (w - 1) as f64 && j.y <= (h - 1) as f64;
        if !inside {
            j.visibility = 0;
        }
    }
    Ok(Sample {
        image,
        keypoints,
        meta: SampleMeta {
            source_id: record.source_id,
            transform: t,
            flipped: flip,
        },
    })
}

/// Axis-aligned hull of a box's corners after `t`.
fn transformed_box(b: &BBox, t: &Affine) -> BBox {
    let corners = [(b.x, b.y), (b.x + b.w, b.y), (b.x, b.y + b.h), (b.x + b.w, b.y + b.h)].map(|(x, y)| t.apply(x, y));
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in corners {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Random rotation, scale and mirror within the configured ranges.
pub fn augment(record: &Record, rng: &mut ChaCha8Rng, cfg: &AugmentConfig) -> Result<Sample> {
    let rotation = if cfg.max_rotation > 0.0 { rng.gen_range(-cfg.max_rotation..=cfg.max_rotation) } else { 0.0 };
    let scale = if cfg.scale.1 > cfg.scale.0 { rng.gen_range(cfg.scale.0..=cfg.scale.1) } else { cfg.scale.0 };
    let flip = cfg.flip_prob > 0.0 && rng.gen_bool(cfg.flip_prob.min(1.0));
    crop_sample(record, cfg, rotation, scale, flip)
}

/// Augmentation stream of sample `index` in `epoch`; independent of worker identity.
pub fn sample_rng(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    stream(seed, &[AUGMENT_TAG, epoch, index as u64])
}

/// Visiting order of `n` samples in `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[EPOCH_TAG, epoch]));
    order
}

/// COCO-style records for generated figures: one image and one annotation each.
pub fn synth_annotations(records: &[SynthRecord]) -> (Vec<ImageInfo>, Vec<Annotation>) {
    let images = records
        .iter()
        .map(|r| ImageInfo {
            id: r.index as u64,
            file_name: alloc::format!("{:06}.ppm", r.index),
            width: r.image.w,
            height: r.image.h,
        })
        .collect();
    let anns = records
        .iter()
        .map(|r| Annotation {
            id: r.index as u64,
            image_id: r.index as u64,
            keypoints: r.keypoints.clone(),
            area: r.keypoints.bbox.area(),
            crowd: false,
        })
        .collect();
    (images, anns)
}
