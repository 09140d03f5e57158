//! OKS average precision (COCO protocol), PCKh (MPII protocol) and PCK.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{BBox, KeypointSet};
use crate::{Error, Result};

/// Per-joint sigmas of the COCO keypoint benchmark. The OKS constant is `k_i = 2 * sigma_i`.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
];

pub fn coco_kappas() -> Vec<f64> {
    COCO_SIGMAS.iter().map(|s| 2.0 * s).collect()
}

/// `0.50, 0.55, ..., 0.95`.
pub fn oks_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Mean over the ground truth's labeled joints of `exp(-d^2 / (2 area k^2))`.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet, area: f64, kappas: &[f64]) -> Result<f64> {
    if !(area > 0.0 && area.is_finite()) {
        return Err(Error::invalid("oks", "object area must be positive"));
    }
    if pred.joints.len() != gt.joints.len() || gt.joints.len() != kappas.len() {
        return Err(Error::invalid("oks", "joint counts of prediction, ground truth and constants differ"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), k) in pred.joints.iter().zip(&gt.joints).zip(kappas) {
        if !g.labeled() {
            continue;
        }
        let d2 = (p.x - g.x) * (p.x - g.x) + (p.y - g.y) * (p.y - g.y);
        sum += libm::exp(-d2 / (2.0 * area * k * k));
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("oks", "ground truth has no labeled joints"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Annotation id; breaks ties between equally good matches.
    pub id: u64,
    pub image_id: u64,
    pub keypoints: KeypointSet,
    pub area: f64,
    pub crowd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Stable id; orders detections of equal score.
    pub id: u64,
    pub image_id: u64,
    pub keypoints: KeypointSet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
    pub mean_ap: f64,
    pub num_gt: usize,
    /// Crowd annotations and annotations without labeled joints are left out.
    pub ignored_crowd: usize,
    pub ignored_unlabeled: usize,
}

/// Area under the precision/recall curve sampled at recall `0, 0.01, ..., 1`, with
/// precision made non-increasing in recall first. `tp` is in ranked order.
pub fn interpolated_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut j = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while j < recall.len() && recall[j] < level - 1e-12 {
            j += 1;
        }
        if j < recall.len() {
            total += precision[j];
        }
    }
    total / 101.0
}

/// Greedy one-to-one matching within each image, detections in descending score order,
/// each taking the unmatched ground truth with the highest OKS at or above `threshold`.
/// Returns the true-positive flag of every detection in global rank order.
pub fn greedy_match(dets: &[Detection], gts: &[GroundTruth], oks_table: &[Vec<Option<f64>>], threshold: f64) -> Vec<bool> {
    let order = rank(dets);
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(dets.len());
    for &d in &order {
        let mut best: Option<(f64, u64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != dets[d].image_id {
                continue;
            }
            let Some(o) = oks_table[d][g] else { continue };
            if o < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bo, bid, _)) => o > bo || (o == bo && gt.id < bid),
            };
            if better {
                best = Some((o, gt.id, g));
            }
        }
        match best {
            Some((_, _, g)) => {
                taken[g] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    tp
}

/// Detection indices by descending score, then ascending id.
pub fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(dets[a].id.cmp(&dets[b].id)));
    order
}

/// OKS of every detection against every usable ground truth in the same image.
pub fn oks_matrix(dets: &[Detection], gts: &[GroundTruth], kappas: &[f64]) -> Result<Vec<Vec<Option<f64>>>> {
    dets.iter()
        .map(|d| {
            gts.iter()
                .map(|g| {
                    if g.image_id == d.image_id {
                        oks(&d.keypoints, &g.keypoints, g.area, kappas).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect()
        })
        .collect()
}

/// COCO-style keypoint AP over `thresholds`.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], kappas: &[f64], thresholds: &[f64]) -> Result<ApReport> {
    let ignored_crowd = gts.iter().filter(|g| g.crowd).count();
    let ignored_unlabeled = gts
        .iter()
        .filter(|g| !g.crowd && !g.keypoints.joints.iter().any(|j| j.labeled()))
        .count();
    let usable: Vec<GroundTruth> = gts
        .iter()
        .filter(|g| !g.crowd && g.keypoints.joints.iter().any(|j| j.labeled()))
        .cloned()
        .collect();
    let table = oks_matrix(dets, &usable, kappas)?;
    let ap: Vec<f64> = thresholds
        .iter()
        .map(|&t| interpolated_ap(&greedy_match(dets, &usable, &table, t), usable.len()))
        .collect();
    let mean_ap = if ap.is_empty() { 0.0 } else { ap.iter().sum::<f64>() / ap.len() as f64 };
    Ok(ApReport {
        thresholds: thresholds.to_vec(),
        ap,
        mean_ap,
        num_gt: usable.len(),
        ignored_crowd,
        ignored_unlabeled,
    })
}

/// Head segment length used by the MPII protocol: 0.6 of the head box diagonal.
pub fn mpii_head_size(head: &BBox) -> f64 {
    0.6 * libm::sqrt(head.w * head.w + head.h * head.h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PckReport {
    /// Fraction correct per joint, over samples where the joint is labeled (`NaN` if never).
    pub per_joint: Vec<f64>,
    /// Mean of the defined per-joint rates.
    pub mean: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn pck_core(preds: &[KeypointSet], gts: &[KeypointSet], norms: &[Option<f64>], alpha: f64) -> Result<PckReport> {
    if preds.len() != gts.len() || gts.len() != norms.len() {
        return Err(Error::invalid("pck", "prediction and ground-truth counts differ"));
    }
    let k = gts.first().map_or(0, |g| g.joints.len());
    let mut hits = vec![0usize; k];
    let mut total = vec![0usize; k];
    let (mut evaluated, mut skipped) = (0, 0);
    for ((p, g), norm) in preds.iter().zip(gts).zip(norms) {
        let Some(norm) = norm.filter(|n| *n > 0.0 && n.is_finite()) else {
            skipped += 1;
            continue;
        };
        if p.joints.len() != k || g.joints.len() != k {
            return Err(Error::invalid("pck", "joint counts differ between samples"));
        }
        evaluated += 1;
        for (c, (pj, gj)) in p.joints.iter().zip(&g.joints).enumerate() {
            if !gj.labeled() {
                continue;
            }
            total[c] += 1;
            let d = libm::sqrt((pj.x - gj.x) * (pj.x - gj.x) + (pj.y - gj.y) * (pj.y - gj.y));
            if d <= alpha * norm {
                hits[c] += 1;
            }
        }
    }
    let per_joint: Vec<f64> = hits
        .iter()
        .zip(&total)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect();
    let defined: Vec<f64> = per_joint.iter().copied().filter(|v| !v.is_nan()).collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(PckReport {
        per_joint,
        mean,
        evaluated,
        skipped,
    })
}

/// A joint is correct when within `alpha` head sizes (closed boundary). Samples without a head size are skipped.
pub fn pckh(preds: &[KeypointSet], gts: &[KeypointSet], head_sizes: &[Option<f64>], alpha: f64) -> Result<PckReport> {
    pck_core(preds, gts, head_sizes, alpha)
}

/// A joint is correct when within `alpha` times the longer side of the ground-truth box.
pub fn pck_bbox(preds: &[KeypointSet], gts: &[KeypointSet], alpha: f64) -> Result<PckReport> {
    let norms: Vec<Option<f64>> = gts.iter().map(|g| Some(g.bbox.w.max(g.bbox.h))).collect();
    pck_core(preds, gts, &norms, alpha)
}
