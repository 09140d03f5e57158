use alloc::vec;
use alloc::vec::Vec;

use crate::codec::Affine;
use crate::{Error, Result, Shape, Tensor};

/// Planar `C x H x W` image with values in `[0, 1]`; pixel centres sit at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Image {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::invalid("image", alloc::format!("{} values for {c}x{h}x{w}", data.len())));
        }
        Ok(Image { c, h, w, data })
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Bilinear sample with zeros outside the image.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f32 {
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let get = |yy: i64, xx: i64| -> f32 {
            if yy < 0 || xx < 0 || yy >= self.h as i64 || xx >= self.w as i64 {
                0.0
            } else {
                self.at(c, yy as usize, xx as usize)
            }
        };
        let top = get(y0, x0) * (1.0 - fx) + get(y0, x0 + 1) * fx;
        let bottom = get(y0 + 1, x0) * (1.0 - fx) + get(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Output pixel `p` takes the source value at `forward⁻¹(p)`.
    pub fn warp(&self, forward: &Affine, out_h: usize, out_w: usize) -> Result<Image> {
        let inv = forward.inverse()?;
        let mut out = Image::new(self.c, out_h, out_w);
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                for c in 0..self.c {
                    out.set(c, y, x, self.sample(c, sx, sy));
                }
            }
        }
        Ok(out)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(1, self.c, self.h, self.w)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.shape(), self.data.clone()).expect("consistent image")
    }

    /// Horizontal mirror, `x -> w - 1 - x`.
    pub fn mirrored(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.set(c, y, x, self.at(c, y, self.w - 1 - x));
                }
            }
        }
        out
    }
}

/// `x -> width - 1 - x` in pixel-centre coordinates.
pub fn mirror_transform(width: usize) -> Affine {
    Affine([-1.0, 0.0, width as f64 - 1.0, 0.0, 1.0, 0.0])
}
