use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::arch::COCO_KEYPOINTS as COCO_KEYPOINT_COUNT;
use crate::codec::{BBox, Joint, KeypointSet};
use crate::rng::stream;

const SYNTH_TAG: u64 = 0x7379_6e74;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Canvas `(H, W)`.
    pub canvas: (usize, usize),
    /// Joints keep at least this many pixels from the border.
    pub margin: f64,
    /// Maximum per-pixel background noise.
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas: (128, 96),
            margin: 4.0,
            noise: 0.3,
        }
    }
}

/// One generated figure with exact joint positions in canvas pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub index: usize,
    pub image: Image,
    pub keypoints: KeypointSet,
}

// Joint indices in COCO order.
const NOSE: usize = 0;
const L_EYE: usize = 1;
const R_EYE: usize = 2;
const L_EAR: usize = 3;
const R_EAR: usize = 4;
const L_SHO: usize = 5;
const R_SHO: usize = 6;
const L_ELB: usize = 7;
const R_ELB: usize = 8;
const L_WRI: usize = 9;
const R_WRI: usize = 10;
const L_HIP: usize = 11;
const R_HIP: usize = 12;
const L_KNE: usize = 13;
const R_KNE: usize = 14;
const L_ANK: usize = 15;
const R_ANK: usize = 16;

/// Drawn segments and their colours. Colours depend on the limb, never on the side,
/// so a mirrored figure with swapped labels is another valid figure.
const LIMBS: [(usize, usize, [f32; 3]); 14] = [
    (L_SHO, R_SHO, [0.95, 0.95, 0.95]),
    (L_HIP, R_HIP, [0.95, 0.95, 0.95]),
    (L_SHO, L_HIP, [0.95, 0.95, 0.95]),
    (R_SHO, R_HIP, [0.95, 0.95, 0.95]),
    (L_SHO, L_ELB, [0.95, 0.55, 0.10]),
    (R_SHO, R_ELB, [0.95, 0.55, 0.10]),
    (L_ELB, L_WRI, [0.95, 0.90, 0.15]),
    (R_ELB, R_WRI, [0.95, 0.90, 0.15]),
    (L_HIP, L_KNE, [0.10, 0.55, 0.95]),
    (R_HIP, R_KNE, [0.10, 0.55, 0.95]),
    (L_KNE, L_ANK, [0.15, 0.90, 0.65]),
    (R_KNE, R_ANK, [0.15, 0.90, 0.65]),
    (L_EAR, R_EAR, [0.85, 0.65, 0.65]),
    (L_EYE, R_EYE, [0.85, 0.65, 0.65]),
];

fn rot(v: (f64, f64), deg: f64) -> (f64, f64) {
    let t = deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    (c * v.0 - s * v.1, s * v.0 + c * v.1)
}

fn add(a: (f64, f64), b: (f64, f64), k: f64) -> (f64, f64) {
    (a.0 + k * b.0, a.1 + k * b.1)
}

/// Front-facing figure: anatomical left lies towards +x.
fn pose(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> [(f64, f64); COCO_KEYPOINT_COUNT] {
    let (h, w) = (cfg.canvas.0 as f64, cfg.canvas.1 as f64);
    let height = rng.gen_range(0.55..0.8) * h;
    let lean = rng.gen_range(-12.0..12.0);
    let down = rot((0.0, 1.0), lean);
    let right = rot((1.0, 0.0), lean);
    let neck = (rng.gen_range(0.4..0.6) * w, rng.gen_range(0.18..0.3) * h);
    let torso = height * rng.gen_range(0.28..0.34);
    let pelvis = add(neck, down, torso);
    let mut p = [(0.0, 0.0); COCO_KEYPOINT_COUNT];
    let sho = height * rng.gen_range(0.09..0.12);
    let hip = height * rng.gen_range(0.06..0.08);
    p[L_SHO] = add(neck, right, sho);
    p[R_SHO] = add(neck, right, -sho);
    p[L_HIP] = add(pelvis, right, hip);
    p[R_HIP] = add(pelvis, right, -hip);

    let head = add(neck, down, -height * rng.gen_range(0.1..0.13));
    let turn = rng.gen_range(-0.3..0.3);
    let unit = height * 0.025;
    p[NOSE] = add(add(head, down, unit * 0.8), right, turn * unit);
    p[L_EYE] = add(add(head, right, unit * (1.0 + turn)), down, -unit * 0.3);
    p[R_EYE] = add(add(head, right, -unit * (1.0 - turn)), down, -unit * 0.3);
    p[L_EAR] = add(head, right, unit * (2.2 + turn));
    p[R_EAR] = add(head, right, -unit * (2.2 - turn));

    let limb = |rng: &mut ChaCha8Rng, root: (f64, f64), side: f64, upper: f64, lower: f64, spread: (f64, f64), bend: f64| {
        // Angles open away from the body on the given side.
        let a = rng.gen_range(spread.0..spread.1);
        let d1 = rot(down, -side * a);
        let mid = add(root, d1, upper);
        let b = rng.gen_range(-bend..bend);
        let d2 = rot(d1, -side * b);
        (mid, add(mid, d2, lower))
    };
    let (arm_u, arm_l) = (height * rng.gen_range(0.14..0.17), height * rng.gen_range(0.12..0.15));
    let (leg_u, leg_l) = (height * rng.gen_range(0.2..0.23), height * rng.gen_range(0.19..0.22));
    (p[L_ELB], p[L_WRI]) = limb(rng, p[L_SHO], 1.0, arm_u, arm_l, (10.0, 110.0), 70.0);
    (p[R_ELB], p[R_WRI]) = limb(rng, p[R_SHO], -1.0, arm_u, arm_l, (10.0, 110.0), 70.0);
    (p[L_KNE], p[L_ANK]) = limb(rng, p[L_HIP], 1.0, leg_u, leg_l, (0.0, 35.0), 25.0);
    (p[R_KNE], p[R_ANK]) = limb(rng, p[R_HIP], -1.0, leg_u, leg_l, (0.0, 35.0), 25.0);
    p
}

fn inside(p: &[(f64, f64)], cfg: &SynthConfig) -> bool {
    let (h, w) = (cfg.canvas.0 as f64, cfg.canvas.1 as f64);
    p.iter()
        .all(|&(x, y)| x >= cfg.margin && y >= cfg.margin && x <= w - 1.0 - cfg.margin && y <= h - 1.0 - cfg.margin)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (p.0 - a.0 - t * vx, p.1 - a.1 - t * vy);
    libm::sqrt(dx * dx + dy * dy)
}

fn render(p: &[(f64, f64)], rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Image {
    let (h, w) = cfg.canvas;
    let mut img = Image::new(3, h, w);
    for v in img.data.iter_mut() {
        *v = rng.gen_range(0.0..=cfg.noise);
    }
    let thickness = rng.gen_range(1.2..1.8);
    let head = (p[L_EAR].0 * 0.5 + p[R_EAR].0 * 0.5, p[L_EAR].1 * 0.5 + p[R_EAR].1 * 0.5);
    let head_r = segment_distance(p[L_EAR], head, head) * 1.1;
    for y in 0..h {
        for x in 0..w {
            let q = (x as f64, y as f64);
            let mut colour: Option<[f32; 3]> = None;
            if segment_distance(q, head, head) <= head_r {
                colour = Some([0.85, 0.65, 0.65]);
            }
            for &(a, b, c) in &LIMBS {
                if segment_distance(q, p[a], p[b]) <= thickness {
                    colour = Some(c);
                }
            }
            for (j, &pt) in p.iter().enumerate() {
                if segment_distance(q, pt, pt) <= 1.6 {
                    // Joint markers are shaded by joint type only.
                    let t = [0.0, 0.2, 0.2, 0.3, 0.3, 0.45, 0.45, 0.6, 0.6, 0.75, 0.75, 0.5, 0.5, 0.65, 0.65, 0.8, 0.8][j];
                    colour = Some([1.0, t, 1.0 - t]);
                }
            }
            if let Some(c) = colour {
                for (ch, v) in c.iter().enumerate() {
                    img.set(ch, y, x, *v);
                }
            }
        }
    }
    img
}

/// Deterministic figure `index` of the dataset identified by `seed`.
pub fn synth_sample(seed: u64, index: usize, cfg: &SynthConfig) -> SynthRecord {
    let mut rng = stream(seed, &[SYNTH_TAG, index as u64]);
    let pts = loop {
        let p = pose(&mut rng, cfg);
        if inside(&p, cfg) {
            break p;
        }
    };
    let image = render(&pts, &mut rng, cfg);
    let joints: Vec<Joint> = pts.iter().map(|&(x, y)| Joint::new(x, y, 2)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for j in &joints {
        x0 = x0.min(j.x);
        y0 = y0.min(j.y);
        x1 = x1.max(j.x);
        y1 = y1.max(j.y);
    }
    let pad = 3.0;
    let bbox = BBox::new(x0 - pad, y0 - pad, x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
    SynthRecord {
        index,
        image,
        keypoints: KeypointSet::new(joints, bbox),
    }
}

/// Figures `0..n`.
pub fn synth_generate(seed: u64, n: usize, cfg: &SynthConfig) -> Vec<SynthRecord> {
    (0..n).map(|i| synth_sample(seed, i, cfg)).collect()
}
