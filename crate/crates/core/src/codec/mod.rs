//! Gaussian heatmap targets and test-time keypoint decoding.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Shape, Tensor};

mod transform;

pub use transform::{crop_transform, Affine, BBox};

/// Left/right joint swaps for the 17 COCO keypoints.
pub const COCO_FLIP_PAIRS: [(usize, usize); 8] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];
/// Left/right joint swaps for the 16 MPII keypoints.
pub const MPII_FLIP_PAIRS: [(usize, usize); 6] = [(0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13)];

pub const COCO_JOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Heatmaps are a quarter of the network input in each direction.
pub const HEATMAP_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    /// 0 unlabeled, 1 labeled but occluded, 2 visible.
    pub visibility: u8,
}

impl Joint {
    pub fn new(x: f64, y: f64, visibility: u8) -> Self {
        Joint {
            x,
            y,
            score: 1.0,
            visibility,
        }
    }

    pub fn labeled(&self) -> bool {
        self.visibility > 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub joints: Vec<Joint>,
    pub bbox: BBox,
    pub bbox_score: f64,
}

impl KeypointSet {
    pub fn new(joints: Vec<Joint>, bbox: BBox) -> Self {
        KeypointSet {
            joints,
            bbox,
            bbox_score: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Mean joint score times the box score.
    pub fn pose_score(&self) -> f64 {
        if self.joints.is_empty() {
            return 0.0;
        }
        let mean = self.joints.iter().map(|j| j.score).sum::<f64>() / self.joints.len() as f64;
        mean * self.bbox_score
    }

    /// All joint positions through `t`.
    pub fn transformed(&self, t: &Affine) -> KeypointSet {
        let mut out = self.clone();
        for j in &mut out.joints {
            (j.x, j.y) = t.apply(j.x, j.y);
        }
        out
    }

    /// Relabel through `pairs` (left becomes right).
    pub fn swapped(&self, pairs: &[(usize, usize)]) -> Result<KeypointSet> {
        let perm = flip_permutation(pairs, self.joints.len())?;
        let mut out = self.clone();
        for (c, &p) in perm.iter().enumerate() {
            out.joints[c] = self.joints[p];
        }
        Ok(out)
    }
}

/// `perm[c]` is the channel whose content lands on `c` after a left/right swap.
pub fn flip_permutation(pairs: &[(usize, usize)], k: usize) -> Result<Vec<usize>> {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut seen = vec![false; k];
    for &(a, b) in pairs {
        if a >= k || b >= k || a == b || seen[a] || seen[b] {
            return Err(Error::invalid(
                "flip pairs",
                alloc::format!("({a}, {b}) breaks the involution over {k} joints"),
            ));
        }
        seen[a] = true;
        seen[b] = true;
        perm.swap(a, b);
    }
    Ok(perm)
}

/// `K` maps of `H x W` non-negative responses and the map from heatmap cell
/// coordinates (cell centres at integers) to image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
    pub transform: Affine,
}

impl HeatmapStack {
    pub fn zeros(k: usize, h: usize, w: usize) -> Self {
        HeatmapStack {
            k,
            h,
            w,
            values: vec![0.0; k * h * w],
            transform: Affine::IDENTITY,
        }
    }

    pub fn new(k: usize, h: usize, w: usize, values: Vec<f32>, transform: Affine) -> Result<Self> {
        if values.len() != k * h * w {
            return Err(Error::invalid(
                "heatmap stack",
                alloc::format!("{} values for {k}x{h}x{w}", values.len()),
            ));
        }
        Ok(HeatmapStack {
            k,
            h,
            w,
            values,
            transform,
        })
    }

    /// One sample `n` of an `(N, K, H, W)` tensor.
    pub fn from_tensor(t: &Tensor<f32>, n: usize, transform: Affine) -> Result<Self> {
        let s = t.shape();
        if n >= s.n {
            return Err(Error::invalid("heatmap stack", "sample index out of range"));
        }
        let len = s.c * s.plane();
        let values = t.data()[n * len..(n + 1) * len].to_vec();
        HeatmapStack::new(s.c, s.h, s.w, values, transform)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(Shape::new(1, self.k, self.h, self.w), self.values.clone()).expect("consistent stack")
    }

    pub fn map(&self, c: usize) -> &[f32] {
        &self.values[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn map_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.h * self.w;
        &mut self.values[c * p..(c + 1) * p]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.h + y) * self.w + x]
    }

    /// Horizontal mirror of every map.
    pub fn mirrored(&self) -> HeatmapStack {
        let mut out = self.clone();
        for c in 0..self.k {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.values[(c * self.h + y) * self.w + x] = self.at(c, y, self.w - 1 - x);
                }
            }
        }
        out
    }

    fn same_layout(&self, other: &HeatmapStack, op: &'static str) -> Result<()> {
        if (self.k, self.h, self.w) != (other.k, other.h, other.w) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: Shape::new(1, self.k, self.h, self.w),
                rhs: Shape::new(1, other.k, other.h, other.w),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    /// Gaussian standard deviation in heatmap cells.
    pub sigma: f64,
    /// Input pixels per heatmap cell.
    pub stride: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            sigma: 2.0,
            stride: HEATMAP_STRIDE,
        }
    }
}

/// Unnormalised Gaussian targets for joints given in network-input pixels, plus a
/// per-joint mask that is 0 for unlabeled joints and joints that fall off the map.
pub fn encode_targets(kps: &KeypointSet, size: (usize, usize), cfg: &TargetConfig) -> (HeatmapStack, Vec<f32>) {
    let (h, w) = size;
    let k = kps.joints.len();
    let mut stack = HeatmapStack::zeros(k, h, w);
    stack.transform = Affine::scale(cfg.stride as f64);
    let mut mask = vec![0.0f32; k];
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for (c, j) in kps.joints.iter().enumerate() {
        let (mx, my) = (j.x / cfg.stride as f64, j.y / cfg.stride as f64);
        let inside = mx.is_finite() && my.is_finite() && mx > -0.5 && my > -0.5 && mx < w as f64 - 0.5 && my < h as f64 - 0.5;
        if !j.labeled() || !inside {
            continue;
        }
        mask[c] = 1.0;
        let map = stack.map_mut(c);
        for y in 0..h {
            let dy = y as f64 - my;
            for x in 0..w {
                let dx = x as f64 - mx;
                map[y * w + x] = libm::exp(-(dx * dx + dy * dy) * inv) as f32;
            }
        }
    }
    (stack, mask)
}

/// Average of `h` and an already un-mirrored flip prediction with left/right channels swapped.
pub fn swap_average(h: &HeatmapStack, unflipped: &HeatmapStack, pairs: &[(usize, usize)]) -> Result<HeatmapStack> {
    h.same_layout(unflipped, "flip average")?;
    let perm = flip_permutation(pairs, h.k)?;
    let mut out = h.clone();
    for c in 0..h.k {
        let src = unflipped.map(perm[c]);
        for (o, s) in out.map_mut(c).iter_mut().zip(src) {
            *o = (*o + *s) / 2.0;
        }
    }
    Ok(out)
}

/// Mirror `h_flip` (the prediction on the mirrored image), swap paired channels and average with `h`.
pub fn flip_average(h: &HeatmapStack, h_flip: &HeatmapStack, pairs: &[(usize, usize)]) -> Result<HeatmapStack> {
    swap_average(h, &h_flip.mirrored(), pairs)
}

/// Normalised `size x size` Gaussian kernel, edge-clamped borders.
pub fn gaussian_blur(h: &HeatmapStack, size: usize, sigma: f64) -> HeatmapStack {
    let r = (size / 2) as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma))).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let mut out = h.clone();
    let (hh, ww) = (h.h as isize, h.w as isize);
    let mut tmp = vec![0.0f64; h.h * h.w];
    for c in 0..h.k {
        let src = h.map(c);
        for y in 0..hh {
            for x in 0..ww {
                let mut acc = 0.0;
                for (t, d) in taps.iter().zip(-r..=r) {
                    acc += t * src[(y * ww + (x + d).clamp(0, ww - 1)) as usize] as f64;
                }
                tmp[(y * ww + x) as usize] = acc;
            }
        }
        let dst = out.map_mut(c);
        for y in 0..hh {
            for x in 0..ww {
                let mut acc = 0.0;
                for (t, d) in taps.iter().zip(-r..=r) {
                    acc += t * tmp[((y + d).clamp(0, hh - 1) * ww + x) as usize];
                }
                dst[(y * ww + x) as usize] = acc as f32;
            }
        }
    }
    out
}

/// Sub-cell refinement applied after locating the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetRule {
    /// Quarter of a cell along the unit vector towards the second-highest cell.
    UnitQuarter,
    /// Quarter of the full vector towards the second-highest cell.
    FullQuarter,
    /// Maximum cell only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// `(kernel size, sigma)` of the post filter, `None` to skip it.
    pub blur: Option<(usize, f64)>,
    pub offset: OffsetRule,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            blur: Some((5, 1.0)),
            offset: OffsetRule::UnitQuarter,
        }
    }
}

/// Location in heatmap cells and the peak response of one map.
pub fn locate(map: &[f32], h: usize, w: usize, rule: OffsetRule) -> (f64, f64, f64) {
    let mut best = (0usize, f32::NEG_INFINITY);
    let mut lo = f32::INFINITY;
    for (i, &v) in map.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
        lo = lo.min(v);
    }
    if map.is_empty() || best.1 == lo {
        return ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, 0.0);
    }
    let mut second = (usize::MAX, f32::NEG_INFINITY);
    for (i, &v) in map.iter().enumerate() {
        if i != best.0 && v > second.1 {
            second = (i, v);
        }
    }
    let (px, py) = ((best.0 % w) as f64, (best.0 / w) as f64);
    let (qx, qy) = ((second.0 % w) as f64, (second.0 / w) as f64);
    let (dx, dy) = (qx - px, qy - py);
    let (ox, oy) = match rule {
        OffsetRule::None => (0.0, 0.0),
        OffsetRule::FullQuarter => (0.25 * dx, 0.25 * dy),
        OffsetRule::UnitQuarter => {
            let n = libm::sqrt(dx * dx + dy * dy);
            (0.25 * dx / n, 0.25 * dy / n)
        }
    };
    (px + ox, py + oy, (best.1 as f64).clamp(0.0, 1.0))
}

/// Flip-average (if `flipped` is given, already un-mirrored), blur, locate with the
/// offset rule, clamp scores and map into image coordinates via `h.transform`.
pub fn decode(
    h: &HeatmapStack,
    flipped: Option<&HeatmapStack>,
    flip_pairs: &[(usize, usize)],
    bbox_score: f64,
    cfg: &DecodeConfig,
) -> Result<KeypointSet> {
    let mut stack = match flipped {
        Some(f) => swap_average(h, f, flip_pairs)?,
        None => h.clone(),
    };
    if let Some((size, sigma)) = cfg.blur {
        stack = gaussian_blur(&stack, size, sigma);
    }
    let mut joints = Vec::with_capacity(stack.k);
    for c in 0..stack.k {
        let (x, y, score) = locate(stack.map(c), stack.h, stack.w, cfg.offset);
        let (ix, iy) = h.transform.apply(x, y);
        joints.push(Joint {
            x: ix,
            y: iy,
            score,
            visibility: 2,
        });
    }
    let (x0, y0) = h.transform.apply(-0.5, -0.5);
    let (x1, y1) = h.transform.apply(stack.w as f64 - 0.5, stack.h as f64 - 0.5);
    Ok(KeypointSet {
        joints,
        bbox: BBox::new(x0.min(x1), y0.min(y1), (x1 - x0).abs(), (y1 - y0).abs()),
        bbox_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kps(points: &[(f64, f64, u8)]) -> KeypointSet {
        KeypointSet::new(
            points.iter().map(|&(x, y, v)| Joint::new(x, y, v)).collect(),
            BBox::new(0.0, 0.0, 64.0, 64.0),
        )
    }

    #[test]
    fn target_peak_and_one_sigma_value() {
        let (s, mask) = encode_targets(&kps(&[(40.0, 20.0, 2)]), (16, 16), &TargetConfig::default());
        assert_eq!(s.at(0, 5, 10), 1.0);
        assert!((s.at(0, 5, 12) as f64 - libm::exp(-0.5)).abs() < 1e-7);
        assert_eq!(mask, vec![1.0]);
    }

    #[test]
    fn unlabeled_and_off_map_joints_are_masked() {
        let (s, mask) = encode_targets(&kps(&[(8.0, 8.0, 0), (500.0, 8.0, 2)]), (16, 16), &TargetConfig::default());
        assert_eq!(mask, vec![0.0, 0.0]);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spike_with_distant_runner_up() {
        let mut m = vec![0.0f32; 32 * 32];
        m[10 * 32 + 10] = 1.0;
        m[14 * 32 + 10] = 0.5;
        let (x, y, s) = locate(&m, 32, 32, OffsetRule::UnitQuarter);
        assert_eq!((x, y, s), (10.0, 10.25, 1.0));
        let (_, y, _) = locate(&m, 32, 32, OffsetRule::FullQuarter);
        assert_eq!(y, 11.0);
    }

    #[test]
    fn constant_map_decodes_to_centre_with_zero_score() {
        let (x, y, s) = locate(&[0.3; 12], 3, 4, OffsetRule::UnitQuarter);
        assert_eq!((x, y, s), (1.5, 1.0, 0.0));
    }

    #[test]
    fn pose_score_is_mean_times_box() {
        let mut k = kps(&[(0.0, 0.0, 2), (1.0, 1.0, 2)]);
        k.bbox_score = 0.8;
        assert!((k.pose_score() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn flip_pairs_must_be_an_involution() {
        assert!(flip_permutation(&[(1, 2), (2, 3)], 4).is_err());
        assert!(flip_permutation(&[(0, 4)], 4).is_err());
        assert_eq!(flip_permutation(&COCO_FLIP_PAIRS, 17).unwrap()[5], 6);
        assert!(flip_permutation(&MPII_FLIP_PAIRS, 16).is_ok());
    }
}
