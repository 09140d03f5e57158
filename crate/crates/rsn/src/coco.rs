//! COCO keypoint annotation and result files.

use std::path::Path;

use rsn_core::codec::{BBox, Joint, KeypointSet};
use rsn_core::data::{Annotation, ImageInfo};
use rsn_core::metrics::{Detection, GroundTruth};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const PERSON_CATEGORY: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    num_keypoints: Option<usize>,
    bbox: [f64; 4],
    area: f64,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
    keypoints: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawFile {
    images: Vec<Value>,
    annotations: Vec<Value>,
    #[serde(default)]
    categories: Vec<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawResult {
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    keypoints: Vec<f64>,
    score: f64,
    #[serde(default)]
    id: Option<u64>,
}

fn person() -> u64 {
    PERSON_CATEGORY
}

/// Images and person annotations of one file, joined by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.annotations
            .iter()
            .map(|a| GroundTruth {
                id: a.id,
                image_id: a.image_id,
                keypoints: a.keypoints.clone(),
                area: a.area,
                crowd: a.crowd,
            })
            .collect()
    }
}

fn joints(values: &[f64], k: usize, what: &str) -> std::result::Result<Vec<Joint>, String> {
    if values.len() != 3 * k {
        return Err(format!("{what} has {} keypoint values, expected {}", values.len(), 3 * k));
    }
    values
        .chunks_exact(3)
        .map(|t| {
            let v = t[2];
            if !(v == 0.0 || v == 1.0 || v == 2.0) {
                return Err(format!("{what} has visibility {v}, expected 0, 1 or 2"));
            }
            if !(t[0].is_finite() && t[1].is_finite()) {
                return Err(format!("{what} has a non-finite coordinate"));
            }
            Ok(Joint::new(t[0], t[1], v as u8))
        })
        .collect()
}

fn flatten(k: &KeypointSet) -> Vec<f64> {
    k.joints.iter().flat_map(|j| [j.x, j.y, j.visibility as f64]).collect()
}

/// Parse a keypoint annotation file with `k` joints per person. A malformed record
/// is rejected with its position in the `images` or `annotations` array.
pub fn parse(text: &str, k: usize) -> Result<Dataset> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| Error::format("coco", e.to_string()))?;
    let mut images = Vec::with_capacity(raw.images.len());
    for (i, v) in raw.images.into_iter().enumerate() {
        let r: RawImage =
            serde_json::from_value(v).map_err(|e| Error::format("coco", format!("image record {i}: {e}")))?;
        images.push(ImageInfo {
            id: r.id,
            file_name: r.file_name,
            width: r.width,
            height: r.height,
        });
    }
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for (i, v) in raw.annotations.into_iter().enumerate() {
        let bad = |m: String| Error::format("coco", format!("annotation record {i}: {m}"));
        let r: RawAnnotation = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
        if r.category_id != PERSON_CATEGORY {
            continue;
        }
        if !images.iter().any(|im| im.id == r.image_id) {
            return Err(bad(format!("unknown image id {}", r.image_id)));
        }
        let [x, y, w, h] = r.bbox;
        if !(w >= 0.0 && h >= 0.0 && r.area >= 0.0) {
            return Err(bad("negative box size or area".into()));
        }
        let js = joints(&r.keypoints, k, "keypoints").map_err(bad)?;
        annotations.push(Annotation {
            id: r.id,
            image_id: r.image_id,
            keypoints: KeypointSet::new(js, BBox::new(x, y, w, h)),
            area: r.area,
            crowd: r.iscrowd != 0,
        });
    }
    Ok(Dataset { images, annotations })
}

pub fn load(path: &Path, k: usize) -> Result<Dataset> {
    parse(&std::fs::read_to_string(path).map_err(Error::io(path))?, k)
}

pub fn to_json(images: &[ImageInfo], annotations: &[Annotation], joint_names: &[&str]) -> String {
    let file = serde_json::json!({
        "images": images.iter().map(|i| RawImage {
            id: i.id,
            file_name: i.file_name.clone(),
            width: i.width,
            height: i.height,
        }).collect::<Vec<_>>(),
        "annotations": annotations.iter().map(|a| RawAnnotation {
            id: a.id,
            image_id: a.image_id,
            category_id: PERSON_CATEGORY,
            keypoints: flatten(&a.keypoints),
            num_keypoints: Some(a.num_keypoints()),
            bbox: [a.keypoints.bbox.x, a.keypoints.bbox.y, a.keypoints.bbox.w, a.keypoints.bbox.h],
            area: a.area,
            iscrowd: a.crowd as u8,
        }).collect::<Vec<_>>(),
        "categories": [RawCategory {
            id: PERSON_CATEGORY,
            name: "person".into(),
            keypoints: joint_names.iter().map(|s| s.to_string()).collect(),
        }],
    });
    serde_json::to_string_pretty(&file).expect("serialisable")
}

pub fn save(path: &Path, images: &[ImageInfo], annotations: &[Annotation], joint_names: &[&str]) -> Result<()> {
    std::fs::write(path, to_json(images, annotations, joint_names)).map_err(Error::io(path))
}

/// A result file: a JSON array of `{image_id, keypoints, score}`. Records without an
/// `id` are numbered by position.
pub fn parse_results(text: &str, k: usize) -> Result<Vec<Detection>> {
    let raw: Vec<Value> = serde_json::from_str(text).map_err(|e| Error::format("results", e.to_string()))?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, v) in raw.into_iter().enumerate() {
        let bad = |m: String| Error::format("results", format!("record {i}: {m}"));
        let r: RawResult = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
        if r.category_id != PERSON_CATEGORY {
            continue;
        }
        if !r.score.is_finite() {
            return Err(bad("non-finite score".into()));
        }
        let js = joints_lenient(&r.keypoints, k).map_err(bad)?;
        out.push(Detection {
            id: r.id.unwrap_or(i as u64),
            image_id: r.image_id,
            keypoints: KeypointSet::new(js, BBox::default()),
            score: r.score,
        });
    }
    Ok(out)
}

/// Predictions carry a confidence instead of a visibility flag in the third slot.
fn joints_lenient(values: &[f64], k: usize) -> std::result::Result<Vec<Joint>, String> {
    if values.len() != 3 * k {
        return Err(format!("{} keypoint values, expected {}", values.len(), 3 * k));
    }
    Ok(values
        .chunks_exact(3)
        .map(|t| Joint {
            x: t[0],
            y: t[1],
            score: t[2],
            visibility: 2,
        })
        .collect())
}

pub fn load_results(path: &Path, k: usize) -> Result<Vec<Detection>> {
    parse_results(&std::fs::read_to_string(path).map_err(Error::io(path))?, k)
}

pub fn results_to_json(dets: &[Detection]) -> String {
    let raw: Vec<RawResult> = dets
        .iter()
        .map(|d| RawResult {
            image_id: d.image_id,
            category_id: PERSON_CATEGORY,
            keypoints: d.keypoints.joints.iter().flat_map(|j| [j.x, j.y, j.score]).collect(),
            score: d.score,
            id: Some(d.id),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("serialisable")
}
