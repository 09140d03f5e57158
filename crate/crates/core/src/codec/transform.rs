use core::fmt;

use crate::{Error, Result};

/// `x' = a x + b y + c`, `y' = d x + e y + f`.
#[derive(Clone, Copy, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl fmt::Debug for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "Affine[[{a}, {b}, {c}], [{d}, {e}, {g}]]")
    }
}

impl Default for Affine {
    fn default() -> Self {
        Affine::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn scale(s: f64) -> Self {
        Affine([s, 0.0, 0.0, 0.0, s, 0.0])
    }

    pub fn translate(dx: f64, dy: f64) -> Self {
        Affine([1.0, 0.0, dx, 0.0, 1.0, dy])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.0;
        (a * x + b * y + c, d * x + e * y + f)
    }

    /// Linear part only.
    pub fn apply_vector(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, _, d, e, _] = self.0;
        (a * x + b * y, d * x + e * y)
    }

    pub fn det(&self) -> f64 {
        self.0[0] * self.0[4] - self.0[1] * self.0[3]
    }

    pub fn inverse(&self) -> Result<Affine> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(Error::invalid("affine inverse", "singular transform"));
        }
        let [a, b, c, d, e, f] = self.0;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Affine([ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)]))
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Affine) -> Affine {
        let [a, b, c, d, e, f] = self.0;
        let [p, q, r, s, t, u] = other.0;
        Affine([
            p * a + q * d,
            p * b + q * e,
            p * c + q * f + r,
            s * a + t * d,
            s * b + t * e,
            s * c + t * f + u,
        ])
    }
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Same centre, both sides multiplied by `factor`.
    pub fn padded(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Shorter side grown so that `w / h == aspect`.
    pub fn with_aspect(&self, aspect: f64) -> BBox {
        let (cx, cy) = self.center();
        let (w, h) = if self.w > aspect * self.h {
            (self.w, self.w / aspect)
        } else {
            (self.h * aspect, self.h)
        };
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }
}

/// Image-to-crop map for a network input of `input = (H, W)` pixels.
///
/// The box is grown to the input aspect ratio, then a source region `scale` times
/// that size, rotated by `rotation_deg` about the box centre, is mapped onto the input.
/// With `rotation_deg = 90` the box's up direction lands on the crop's right.
pub fn crop_transform(bbox: &BBox, input: (usize, usize), rotation_deg: f64, scale: f64) -> Result<Affine> {
    if !bbox.is_valid() {
        return Err(Error::invalid("crop_transform", "bounding box must have finite, positive size"));
    }
    if !(scale.is_finite() && scale > 0.0 && rotation_deg.is_finite()) || input.0 == 0 || input.1 == 0 {
        return Err(Error::invalid("crop_transform", "scale, rotation and input size must be valid"));
    }
    let (ih, iw) = (input.0 as f64, input.1 as f64);
    let src = bbox.with_aspect(iw / ih);
    let k = iw / (src.w * scale);
    let (cx, cy) = src.center();
    let t = rotation_deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    let rot = Affine([k * c, -k * s, 0.0, k * s, k * c, 0.0]);
    Ok(Affine::translate(-cx, -cy).then(&rot).then(&Affine::translate(iw / 2.0, ih / 2.0)))
}
