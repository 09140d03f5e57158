//! Forward and backward kernels for the differentiable primitives.
//!
//! Every forward kernel validates its operands and returns a fresh tensor.
//! Backward kernels take the upstream gradient `dy` and whatever forward
//! values they need, and return gradients for each differentiable operand.
//! Convolutions are cross-correlations (no kernel flip).

use alloc::vec;
use alloc::vec::Vec;

use super::{gemm_nn, gemm_nt, gemm_tn, Shape, Tensor};
use crate::{Error, Result, Scalar};

/// Batchnorm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

/// Kernel sizes accepted by [`conv2d`].
pub const CONV_KERNELS: [usize; 4] = [1, 3, 7, 9];

/// Output extent of a sliding window, `floor((n + 2 pad - k) / stride) + 1`.
pub fn window_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || n + 2 * pad < k {
        return None;
    }
    Some((n + 2 * pad - k) / stride + 1)
}

fn check_vector<S: Scalar>(op: &'static str, t: &Tensor<S>, c: usize) -> Result<()> {
    let s = t.shape();
    if s != Shape::channels(c) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: Shape::channels(c),
            rhs: s,
        });
    }
    Ok(())
}

fn spatial_out(
    op: &'static str,
    x: Shape,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be at least 1"));
    }
    let ho = window_out(x.h, k, stride, pad).ok_or(Error::DimMismatch {
        op,
        dim: "height",
        expected: k,
        actual: x.h + 2 * pad,
    })?;
    let wo = window_out(x.w, k, stride, pad).ok_or(Error::DimMismatch {
        op,
        dim: "width",
        expected: k,
        actual: x.w + 2 * pad,
    })?;
    Ok((ho, wo))
}

// ---------------------------------------------------------------------------
// conv2d

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output columns `[lo, hi)` for kernel offset `kj` along an axis of length `n`.
    fn valid_range(&self, kj: usize, n: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let hi = if n + p > kj { ((n - 1 + p - kj) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<S: Scalar>(&self, x: &[S], col: &mut [S]) {
        let cols = self.col_cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                let (oh_lo, oh_hi) = self.valid_range(ki, self.h, self.ho);
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    dst.iter_mut().for_each(|v| *v = S::ZERO);
                    let (ow_lo, ow_hi) = self.valid_range(kj, self.w, self.wo);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * self.stride + ki - self.pad;
                        let src = &plane[ih * self.w..(ih + 1) * self.w];
                        let d = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if ow_lo == ow_hi {
                            continue;
                        }
                        if self.stride == 1 {
                            let iw0 = ow_lo + kj - self.pad;
                            d[ow_lo..ow_hi].copy_from_slice(&src[iw0..iw0 + (ow_hi - ow_lo)]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                d[ow] = src[ow * self.stride + kj - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<S: Scalar>(&self, col: &[S], dx: &mut [S]) {
        let cols = self.col_cols();
        for ci in 0..self.c_in {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                let (oh_lo, oh_hi) = self.valid_range(ki, self.h, self.ho);
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (ow_lo, ow_hi) = self.valid_range(kj, self.w, self.wo);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * self.stride + ki - self.pad;
                        let d = &mut plane[ih * self.w..(ih + 1) * self.w];
                        let s = &src[oh * self.wo..(oh + 1) * self.wo];
                        for ow in ow_lo..ow_hi {
                            d[ow * self.stride + kj - self.pad] += s[ow];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.h != ws.w {
        return Err(Error::DimMismatch {
            op,
            dim: "kernel width",
            expected: ws.h,
            actual: ws.w,
        });
    }
    if ws.c != xs.c {
        return Err(Error::DimMismatch {
            op,
            dim: "input channels",
            expected: ws.c,
            actual: xs.c,
        });
    }
    let (ho, wo) = spatial_out(op, xs, ws.h, stride, pad)?;
    Ok(ConvGeom {
        c_in: xs.c,
        h: xs.h,
        w: xs.w,
        k: ws.h,
        stride,
        pad,
        ho,
        wo,
    })
}

/// Dense 2-d convolution. `weight` is `(C_out, C_in, k, k)`, `bias` is `(1, C_out, 1, 1)`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let g = conv_geom("conv2d", x, weight, stride, pad)?;
    if !CONV_KERNELS.contains(&g.k) {
        return Err(Error::invalid("conv2d", alloc::format!("unsupported kernel size {}", g.k)));
    }
    let c_out = weight.shape().n;
    if let Some(b) = bias {
        check_vector("conv2d bias", b, c_out)?;
    }
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, c_out, g.ho, g.wo);
    let mut out = vec![S::ZERO; out_shape.numel()];
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![S::ZERO; rows * cols] };
    let in_len = xs.c * xs.plane();
    for n in 0..xs.n {
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        let src: &[S] = if g.is_pointwise() {
            xn
        } else {
            g.im2col(xn, &mut col);
            &col
        };
        let on = &mut out[n * c_out * cols..(n + 1) * c_out * cols];
        gemm_nn(c_out, cols, rows, weight.data(), src, on);
        if let Some(b) = bias {
            for (co, plane) in on.chunks_mut(cols).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of a convolution with respect to its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<S> {
    pub dx: Option<Tensor<S>>,
    pub dweight: Tensor<S>,
    pub dbias: Option<Tensor<S>>,
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    has_bias: bool,
    dy: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<S>> {
    let g = conv_geom("conv2d backward", x, weight, stride, pad)?;
    let xs = x.shape();
    let c_out = weight.shape().n;
    let expect = Shape::new(xs.n, c_out, g.ho, g.wo);
    if dy.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: expect,
            rhs: dy.shape(),
        });
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = xs.c * xs.plane();
    let mut dw = vec![S::ZERO; weight.numel()];
    let mut dx = if need_dx { vec![S::ZERO; x.numel()] } else { Vec::new() };
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![S::ZERO; rows * cols] };
    let mut dcol = if need_dx && !g.is_pointwise() { vec![S::ZERO; rows * cols] } else { Vec::new() };
    for n in 0..xs.n {
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy.data()[n * c_out * cols..(n + 1) * c_out * cols];
        let src: &[S] = if g.is_pointwise() {
            xn
        } else {
            g.im2col(xn, &mut col);
            &col
        };
        gemm_nt(c_out, rows, cols, dyn_, src, &mut dw);
        if need_dx {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm_tn(rows, cols, c_out, weight.data(), dyn_, dxn);
            } else {
                dcol.iter_mut().for_each(|v| *v = S::ZERO);
                gemm_tn(rows, cols, c_out, weight.data(), dyn_, &mut dcol);
                g.col2im(&dcol, dxn);
            }
        }
    }
    let dbias = has_bias.then(|| channel_sums(dy));
    Ok(ConvGrads {
        dx: if need_dx { Some(Tensor::new(xs, dx)?) } else { None },
        dweight: Tensor::new(weight.shape(), dw)?,
        dbias,
    })
}

/// Per-channel sum over batch and space, as a `(1, C, 1, 1)` tensor.
fn channel_sums<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let s = t.shape();
    let mut out = vec![S::ZERO; s.c];
    for (i, plane) in t.data().chunks(s.plane()).enumerate() {
        let c = i % s.c;
        for &v in plane {
            out[c] += v;
        }
    }
    Tensor::new(Shape::channels(s.c), out).expect("channel vector")
}

// ---------------------------------------------------------------------------
// depthwise conv

fn depthwise_geom<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.n != xs.c {
        return Err(Error::DimMismatch {
            op: "depthwise_conv2d",
            dim: "channels",
            expected: xs.c,
            actual: ws.n,
        });
    }
    if ws.c != 1 {
        return Err(Error::DimMismatch {
            op: "depthwise_conv2d",
            dim: "kernels per channel",
            expected: 1,
            actual: ws.c,
        });
    }
    if ws.h != ws.w || ws.h % 2 == 0 {
        return Err(Error::invalid(
            "depthwise_conv2d",
            alloc::format!("kernel must be square and odd, got {}x{}", ws.h, ws.w),
        ));
    }
    let (ho, wo) = spatial_out("depthwise_conv2d", xs, ws.h, stride, pad)?;
    Ok((ws.h, ho, wo))
}

/// One `k x k` kernel per channel; `weight` is `(C, 1, k, k)`.
pub fn depthwise_conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (k, ho, wo) = depthwise_geom(x, weight, stride, pad)?;
    let xs = x.shape();
    if let Some(b) = bias {
        check_vector("depthwise_conv2d bias", b, xs.c)?;
    }
    let out_shape = Shape::new(xs.n, xs.c, ho, wo);
    let mut out = vec![S::ZERO; out_shape.numel()];
    let (h, w) = (xs.h as isize, xs.w as isize);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let plane = &x.data()[xs.offset(n, c, 0, 0)..xs.offset(n, c, 0, 0) + xs.plane()];
            let ker = &weight.data()[c * k * k..(c + 1) * k * k];
            let b = bias.map_or(S::ZERO, |b| b.data()[c]);
            let o = &mut out[out_shape.offset(n, c, 0, 0)..out_shape.offset(n, c, 0, 0) + ho * wo];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = S::ZERO;
                    for ki in 0..k {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w {
                                continue;
                            }
                            acc += ker[ki * k + kj] * plane[ih as usize * xs.w + iw as usize];
                        }
                    }
                    o[oh * wo + ow] = acc + b;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn depthwise_conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    has_bias: bool,
    dy: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<S>> {
    let (k, ho, wo) = depthwise_geom(x, weight, stride, pad)?;
    let xs = x.shape();
    let expect = Shape::new(xs.n, xs.c, ho, wo);
    if dy.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "depthwise_conv2d backward",
            lhs: expect,
            rhs: dy.shape(),
        });
    }
    let mut dw = vec![S::ZERO; weight.numel()];
    let mut dx = vec![S::ZERO; if need_dx { x.numel() } else { 0 }];
    let (h, w) = (xs.h as isize, xs.w as isize);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.offset(n, c, 0, 0);
            let ker = &weight.data()[c * k * k..(c + 1) * k * k];
            let dker = &mut dw[c * k * k..(c + 1) * k * k];
            let g = &dy.data()[expect.offset(n, c, 0, 0)..expect.offset(n, c, 0, 0) + ho * wo];
            for oh in 0..ho {
                for ow in 0..wo {
                    let gv = g[oh * wo + ow];
                    for ki in 0..k {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w {
                                continue;
                            }
                            let xi = base + ih as usize * xs.w + iw as usize;
                            dker[ki * k + kj] += gv * x.data()[xi];
                            if need_dx {
                                dx[xi] += gv * ker[ki * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: if need_dx { Some(Tensor::new(xs, dx)?) } else { None },
        dweight: Tensor::new(weight.shape(), dw)?,
        dbias: has_bias.then(|| channel_sums(dy)),
    })
}

// ---------------------------------------------------------------------------
// elementwise

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `y` is `(1, C, 1, 1)` or `(N, C, 1, 1)`.
    PerChannel { per_sample: bool },
}

fn broadcast_kind(op: &'static str, x: Shape, y: Shape) -> Result<Broadcast> {
    if x == y {
        return Ok(Broadcast::Same);
    }
    if y.c == x.c && y.h == 1 && y.w == 1 && (y.n == 1 || y.n == x.n) {
        return Ok(Broadcast::PerChannel {
            per_sample: y.n == x.n && x.n != 1,
        });
    }
    Err(Error::ShapeMismatch { op, lhs: x, rhs: y })
}

#[inline]
fn y_index(b: Broadcast, s: Shape, i: usize) -> usize {
    match b {
        Broadcast::Same => i,
        Broadcast::PerChannel { per_sample } => {
            let plane_idx = i / s.plane();
            if per_sample {
                plane_idx
            } else {
                plane_idx % s.c
            }
        }
    }
}

/// `x op y`, where `y` has the same shape as `x` or broadcasts per channel.
pub fn elementwise<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, op: BinaryOp) -> Result<Tensor<S>> {
    let name = match op {
        BinaryOp::Add => "add",
        BinaryOp::Mul => "mul",
    };
    let b = broadcast_kind(name, x.shape(), y.shape())?;
    let s = x.shape();
    let (xd, yd) = (x.data(), y.data());
    let data = match (b, op) {
        (Broadcast::Same, BinaryOp::Add) => xd.iter().zip(yd).map(|(&a, &b)| a + b).collect(),
        (Broadcast::Same, BinaryOp::Mul) => xd.iter().zip(yd).map(|(&a, &b)| a * b).collect(),
        _ => {
            let mut out = Vec::with_capacity(xd.len());
            for (p, plane) in xd.chunks(s.plane()).enumerate() {
                let yv = yd[y_index(b, s, p * s.plane())];
                match op {
                    BinaryOp::Add => out.extend(plane.iter().map(|&v| v + yv)),
                    BinaryOp::Mul => out.extend(plane.iter().map(|&v| v * yv)),
                }
            }
            out
        }
    };
    Tensor::new(s, data)
}

pub fn add<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(x, y, BinaryOp::Add)
}

pub fn mul<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(x, y, BinaryOp::Mul)
}

/// Gradients `(dx, dy_operand)` of `x op y`.
pub fn elementwise_backward<S: Scalar>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    op: BinaryOp,
    dout: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let b = broadcast_kind("elementwise backward", x.shape(), y.shape())?;
    let s = x.shape();
    let g = dout.data();
    let dx: Vec<S> = match op {
        BinaryOp::Add => g.to_vec(),
        BinaryOp::Mul => (0..g.len()).map(|i| g[i] * y.data()[y_index(b, s, i)]).collect(),
    };
    let mut dy = vec![S::ZERO; y.numel()];
    for i in 0..g.len() {
        let contrib = match op {
            BinaryOp::Add => g[i],
            BinaryOp::Mul => g[i] * x.data()[i],
        };
        dy[y_index(b, s, i)] += contrib;
    }
    Ok((Tensor::new(s, dx)?, Tensor::new(y.shape(), dy)?))
}

// ---------------------------------------------------------------------------
// activations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    if v >= S::ZERO {
        S::ONE / (S::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::ONE + e)
    }
}

pub fn activation<S: Scalar>(x: &Tensor<S>, kind: Activation) -> Tensor<S> {
    match kind {
        Activation::Relu => x.map(|v| if v > S::ZERO { v } else { S::ZERO }),
        Activation::Sigmoid => x.map(sigmoid_scalar),
    }
}

/// Gradient through an activation, expressed in terms of its output `y`.
pub fn activation_backward<S: Scalar>(y: &Tensor<S>, kind: Activation, dy: &Tensor<S>) -> Tensor<S> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| match kind {
            Activation::Relu => {
                if yv > S::ZERO {
                    g
                } else {
                    S::ZERO
                }
            }
            Activation::Sigmoid => g * yv * (S::ONE - yv),
        })
        .collect();
    Tensor::new(y.shape(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// pooling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// 3x3 window, stride 2, padding 1.
    Max3x3S2,
    GlobalAvg,
}

fn max_pool_geom(x: Shape) -> Result<(usize, usize)> {
    if x.h < 3 || x.w < 3 {
        return Err(Error::invalid(
            "max_pool",
            alloc::format!("spatial size {}x{} is below the 3x3 window", x.h, x.w),
        ));
    }
    spatial_out("max_pool", x, 3, 2, 1)
}

/// Index (within the plane) of the max of the window at `(oh, ow)`; first max wins.
fn max_window<S: Scalar>(plane: &[S], h: usize, w: usize, oh: usize, ow: usize) -> usize {
    let mut best: Option<(usize, S)> = None;
    for ki in 0..3 {
        let ih = (oh * 2 + ki) as isize - 1;
        if ih < 0 || ih >= h as isize {
            continue;
        }
        for kj in 0..3 {
            let iw = (ow * 2 + kj) as isize - 1;
            if iw < 0 || iw >= w as isize {
                continue;
            }
            let idx = ih as usize * w + iw as usize;
            let v = plane[idx];
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((idx, v));
            }
        }
    }
    best.expect("window overlaps the input").0
}

pub fn pool<S: Scalar>(x: &Tensor<S>, kind: Pool) -> Result<Tensor<S>> {
    let s = x.shape();
    match kind {
        Pool::GlobalAvg => {
            if s.plane() == 0 {
                return Err(Error::invalid("global_avg_pool", "empty spatial extent"));
            }
            let inv = S::ONE / S::from_usize(s.plane());
            let data = x
                .data()
                .chunks(s.plane())
                .map(|p| {
                    let mut acc = S::ZERO;
                    for &v in p {
                        acc += v;
                    }
                    acc * inv
                })
                .collect();
            Tensor::new(Shape::new(s.n, s.c, 1, 1), data)
        }
        Pool::Max3x3S2 => {
            let (ho, wo) = max_pool_geom(s)?;
            let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
            for plane in x.data().chunks(s.plane()) {
                for oh in 0..ho {
                    for ow in 0..wo {
                        out.push(plane[max_window(plane, s.h, s.w, oh, ow)]);
                    }
                }
            }
            Tensor::new(Shape::new(s.n, s.c, ho, wo), out)
        }
    }
}

pub fn pool_backward<S: Scalar>(x: &Tensor<S>, kind: Pool, dy: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    let mut dx = vec![S::ZERO; x.numel()];
    match kind {
        Pool::GlobalAvg => {
            let inv = S::ONE / S::from_usize(s.plane());
            for (p, plane) in dx.chunks_mut(s.plane()).enumerate() {
                let g = dy.data()[p] * inv;
                plane.iter_mut().for_each(|v| *v = g);
            }
        }
        Pool::Max3x3S2 => {
            let (ho, wo) = max_pool_geom(s)?;
            for (p, plane) in x.data().chunks(s.plane()).enumerate() {
                let dplane = &mut dx[p * s.plane()..(p + 1) * s.plane()];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let idx = max_window(plane, s.h, s.w, oh, ow);
                        dplane[idx] += dy.data()[p * ho * wo + oh * wo + ow];
                    }
                }
            }
        }
    }
    Tensor::new(s, dx)
}

// ---------------------------------------------------------------------------
// nearest-neighbour upsampling

pub fn resize_nearest<S: Scalar>(x: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    if factor < 2 {
        return Err(Error::invalid(
            "resize_nearest",
            alloc::format!("factor must be at least 2, got {factor}"),
        ));
    }
    let s = x.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Vec::with_capacity(os.numel());
    for plane in x.data().chunks(s.plane()) {
        for oh in 0..os.h {
            let row = &plane[(oh / factor) * s.w..(oh / factor + 1) * s.w];
            for ow in 0..os.w {
                out.push(row[ow / factor]);
            }
        }
    }
    Tensor::new(os, out)
}

pub fn resize_nearest_backward<S: Scalar>(x_shape: Shape, factor: usize, dy: &Tensor<S>) -> Tensor<S> {
    let s = x_shape;
    let (oh_n, ow_n) = (s.h * factor, s.w * factor);
    let mut dx = vec![S::ZERO; s.numel()];
    for (p, plane) in dy.data().chunks(oh_n * ow_n).enumerate() {
        let d = &mut dx[p * s.plane()..(p + 1) * s.plane()];
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                d[(oh / factor) * s.w + ow / factor] += plane[oh * ow_n + ow];
            }
        }
    }
    Tensor::new(s, dx).expect("input shape")
}

// ---------------------------------------------------------------------------
// channel concat / split

pub fn channel_concat<S: Scalar>(xs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("channel_concat", "no inputs"))?
        .shape();
    let mut c = 0;
    for t in xs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "channel_concat",
                lhs: first,
                rhs: s,
            });
        }
        c += s.c;
    }
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for t in xs {
            let len = t.shape().c * first.plane();
            out.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::new(os, out)
}

/// Channels `[start, start + len)` of `x`.
pub fn channel_slice<S: Scalar>(x: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    if len == 0 || start + len > s.c {
        return Err(Error::invalid(
            "channel_slice",
            alloc::format!("range {start}..{} outside {} channels", start + len, s.c),
        ));
    }
    let os = Shape::new(s.n, len, s.h, s.w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        let o = s.offset(n, start, 0, 0);
        out.extend_from_slice(&x.data()[o..o + len * s.plane()]);
    }
    Tensor::new(os, out)
}

/// Split into `parts` equal channel groups.
pub fn channel_split<S: Scalar>(x: &Tensor<S>, parts: usize) -> Result<Vec<Tensor<S>>> {
    let c = x.shape().c;
    if parts == 0 || c % parts != 0 {
        return Err(Error::Indivisible {
            what: "channel_split input",
            channels: c,
            parts,
        });
    }
    let len = c / parts;
    (0..parts).map(|i| channel_slice(x, i * len, len)).collect()
}

/// Scatter the gradient of a channel slice back into the full input shape, accumulating.
pub fn channel_slice_backward<S: Scalar>(dx: &mut [S], x_shape: Shape, start: usize, dy: &Tensor<S>) {
    let len = dy.shape().c;
    let plane = x_shape.plane();
    for n in 0..x_shape.n {
        let o = x_shape.offset(n, start, 0, 0);
        let src = &dy.data()[n * len * plane..(n + 1) * len * plane];
        for (d, &g) in dx[o..o + len * plane].iter_mut().zip(src) {
            *d += g;
        }
    }
}

// ---------------------------------------------------------------------------
// batchnorm

/// Per-channel batch statistics captured by a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Biased variance (divides by the element count).
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
    /// Elements per channel.
    pub count: usize,
}

fn bn_check<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<()> {
    check_vector("batchnorm gamma", gamma, x.shape().c)?;
    check_vector("batchnorm beta", beta, x.shape().c)
}

pub fn batchnorm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<(Tensor<S>, BatchStats<S>)> {
    bn_check(x, gamma, beta)?;
    let s = x.shape();
    if s.n < 2 {
        return Err(Error::invalid("batchnorm", "train mode needs a batch of at least 2"));
    }
    let m = s.n * s.plane();
    let mut mean = vec![0.0f64; s.c];
    let mut sq = vec![0.0f64; s.c];
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        let c = p % s.c;
        for &v in plane {
            mean[c] += v.to_f64();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        let c = p % s.c;
        for &v in plane {
            let d = v.to_f64() - mean[c];
            sq[c] += d * d;
        }
    }
    let var: Vec<f64> = sq.iter().map(|v| v / m as f64).collect();
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let mut out = Vec::with_capacity(x.numel());
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        let c = p % s.c;
        let scale = S::from_f64(inv[c]) * gamma.data()[c];
        let mu = S::from_f64(mean[c]);
        let b = beta.data()[c];
        out.extend(plane.iter().map(|&v| (v - mu) * scale + b));
    }
    let stats = BatchStats {
        mean: mean.iter().map(|&v| S::from_f64(v)).collect(),
        var: var.iter().map(|&v| S::from_f64(v)).collect(),
        inv_std: inv.iter().map(|&v| S::from_f64(v)).collect(),
        count: m,
    };
    Ok((Tensor::new(s, out)?, stats))
}

pub fn batchnorm_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
) -> Result<Tensor<S>> {
    bn_check(x, gamma, beta)?;
    let s = x.shape();
    check_vector("batchnorm running mean", running_mean, s.c)?;
    check_vector("batchnorm running var", running_var, s.c)?;
    let mut out = Vec::with_capacity(x.numel());
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        let c = p % s.c;
        let inv = S::ONE / (running_var.data()[c] + S::from_f64(BN_EPS)).sqrt();
        let scale = inv * gamma.data()[c];
        let mu = running_mean.data()[c];
        let b = beta.data()[c];
        out.extend(plane.iter().map(|&v| (v - mu) * scale + b));
    }
    Tensor::new(s, out)
}

/// Gradients `(dx, dgamma, dbeta)` of a training-mode batchnorm.
pub fn batchnorm_train_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    stats: &BatchStats<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = x.shape();
    let m = S::from_usize(stats.count);
    let mut dgamma = vec![S::ZERO; s.c];
    let mut dbeta = vec![S::ZERO; s.c];
    for (p, (xp, gp)) in x.data().chunks(s.plane()).zip(dy.data().chunks(s.plane())).enumerate() {
        let c = p % s.c;
        let (mu, inv) = (stats.mean[c], stats.inv_std[c]);
        for (&xv, &g) in xp.iter().zip(gp) {
            dgamma[c] += g * (xv - mu) * inv;
            dbeta[c] += g;
        }
    }
    let mut dx = Vec::with_capacity(x.numel());
    for (p, (xp, gp)) in x.data().chunks(s.plane()).zip(dy.data().chunks(s.plane())).enumerate() {
        let c = p % s.c;
        let (mu, inv) = (stats.mean[c], stats.inv_std[c]);
        let k = gamma.data()[c] * inv / m;
        for (&xv, &g) in xp.iter().zip(gp) {
            let xhat = (xv - mu) * inv;
            dx.push(k * (m * g - dbeta[c] - xhat * dgamma[c]));
        }
    }
    (
        Tensor::new(s, dx).expect("input shape"),
        Tensor::new(Shape::channels(s.c), dgamma).expect("vector"),
        Tensor::new(Shape::channels(s.c), dbeta).expect("vector"),
    )
}

/// Gradients `(dx, dgamma, dbeta)` of an eval-mode batchnorm (a per-channel affine map).
pub fn batchnorm_eval_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = x.shape();
    let mut dgamma = vec![S::ZERO; s.c];
    let mut dbeta = vec![S::ZERO; s.c];
    let mut dx = Vec::with_capacity(x.numel());
    for (p, (xp, gp)) in x.data().chunks(s.plane()).zip(dy.data().chunks(s.plane())).enumerate() {
        let c = p % s.c;
        let inv = S::ONE / (running_var.data()[c] + S::from_f64(BN_EPS)).sqrt();
        let mu = running_mean.data()[c];
        for (&xv, &g) in xp.iter().zip(gp) {
            dgamma[c] += g * (xv - mu) * inv;
            dbeta[c] += g;
            dx.push(g * gamma.data()[c] * inv);
        }
    }
    (
        Tensor::new(s, dx).expect("input shape"),
        Tensor::new(Shape::channels(s.c), dgamma).expect("vector"),
        Tensor::new(Shape::channels(s.c), dbeta).expect("vector"),
    )
}

/// Blend batch statistics into running averages (unbiased variance, PyTorch convention).
pub fn update_running_stats<S: Scalar>(
    running_mean: &mut Tensor<S>,
    running_var: &mut Tensor<S>,
    stats: &BatchStats<S>,
) {
    let mom = S::from_f64(BN_MOMENTUM);
    let keep = S::ONE - mom;
    let unbias = if stats.count > 1 {
        S::from_f64(stats.count as f64 / (stats.count - 1) as f64)
    } else {
        S::ONE
    };
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + mom * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + mom * v * unbias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ones(shape: Shape) -> Tensor<f32> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn conv_of_ones_sums_the_window() {
        let y = conv2d(&ones(Shape::new(1, 1, 3, 3)), &ones(Shape::new(1, 1, 3, 3)), None, 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = stream(3, &[]);
        let x = Tensor::<f32>::randn(Shape::new(2, 1, 5, 4), 1.0, &mut rng);
        let mut k = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        k.set(0, 0, 1, 1, 1.0);
        assert_eq!(conv2d(&x, &k, None, 1, 1).unwrap(), x);
    }

    #[test]
    fn conv_output_size_follows_floor_rule() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 7, 6));
        let w = Tensor::<f32>::zeros(Shape::new(3, 2, 3, 3));
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4, 3));
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_the_dimension() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { dim: "input channels", expected: 3, actual: 2, .. }));
        assert!(alloc::format!("{err}").contains("input channels"));
    }

    #[test]
    fn conv_rejects_unsupported_kernel() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 8, 8));
        let w = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 5));
        assert!(conv2d(&x, &w, None, 1, 2).is_err());
    }

    #[test]
    fn depthwise_constant_field_interior() {
        let v = 0.5f32;
        let x = Tensor::full(Shape::new(1, 2, 12, 12), v);
        let w = ones(Shape::new(2, 1, 9, 9));
        let y = depthwise_conv2d(&x, &w, None, 1, 4).unwrap();
        assert_eq!(y.shape(), x.shape());
        for c in 0..2 {
            for h in 4..8 {
                for w_ in 4..8 {
                    assert_eq!(y.at(0, c, h, w_), 81.0 * v);
                }
            }
        }
        // Border elements see only part of the window.
        assert!(y.at(0, 0, 0, 0) < 81.0 * v);
    }

    #[test]
    fn depthwise_identity_and_channel_mismatch() {
        let mut rng = stream(4, &[]);
        let x = Tensor::<f32>::randn(Shape::new(2, 3, 6, 5), 1.0, &mut rng);
        let mut w = Tensor::<f32>::zeros(Shape::new(3, 1, 3, 3));
        for c in 0..3 {
            w.set(c, 0, 1, 1, 1.0);
        }
        assert_eq!(depthwise_conv2d(&x, &w, None, 1, 1).unwrap(), x);
        let bad = Tensor::<f32>::zeros(Shape::new(2, 1, 3, 3));
        assert!(matches!(
            depthwise_conv2d(&x, &bad, None, 1, 1),
            Err(Error::DimMismatch { dim: "channels", .. })
        ));
    }

    #[test]
    fn elementwise_identities() {
        let mut rng = stream(5, &[]);
        let x = Tensor::<f32>::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
        assert_eq!(add(&x, &Tensor::zeros(x.shape())).unwrap(), x);
        assert_eq!(mul(&x, &Tensor::full(x.shape(), 1.0)).unwrap(), x);
        assert_eq!(mul(&x, &Tensor::full(Shape::channels(3), 1.0)).unwrap(), x);
        let bad = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1));
        assert!(add(&x, &bad).is_err());
        assert!(add(&x, &Tensor::zeros(Shape::new(2, 3, 4, 3))).is_err());
    }

    #[test]
    fn activations() {
        let x = Tensor::<f64>::new(Shape::new(1, 1, 1, 4), vec![-1.0, 2.0, 0.0, 30.0]).unwrap();
        let r = activation(&x, Activation::Relu);
        assert_eq!(r.data(), &[0.0, 2.0, 0.0, 30.0]);
        let s = activation(&x, Activation::Sigmoid);
        assert_eq!(s.data()[2], 0.5);
        assert!((s.data()[3] - 1.0).abs() < 1e-9);
        let neg = activation(&Tensor::<f64>::scalar(-30.0), Activation::Sigmoid);
        assert!(neg.data()[0] > 0.0 && neg.data()[0] < 1e-9);
    }

    #[test]
    fn global_avg_of_constant() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 5, 4), 1.5);
        let y = pool(&x, Pool::GlobalAvg).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        assert!(y.data().iter().all(|&v| (v - 1.5).abs() < 1e-6));
    }

    #[test]
    fn max_pool_spike_and_small_input() {
        let mut x = Tensor::<f32>::zeros(Shape::new(1, 1, 8, 8));
        x.set(0, 0, 5, 2, 7.0);
        let y = pool(&x, Pool::Max3x3S2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        // Row 5 is covered by output rows 2 (rows 3..5) and 3 (rows 5..7); column 2 by output columns 1 (1..3).
        assert_eq!(y.at(0, 0, 2, 1), 7.0);
        assert_eq!(y.at(0, 0, 3, 1), 7.0);
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert!(pool(&Tensor::<f32>::zeros(Shape::new(1, 1, 2, 5)), Pool::Max3x3S2).is_err());
    }

    #[test]
    fn resize_nearest_replicates_blocks() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = resize_nearest(&x, 2).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert!(resize_nearest(&x, 1).is_err());
    }

    #[test]
    fn split_concat_roundtrip() {
        let mut rng = stream(6, &[]);
        let a = Tensor::<f32>::randn(Shape::new(2, 2, 3, 3), 1.0, &mut rng);
        let b = Tensor::<f32>::randn(Shape::new(2, 2, 3, 3), 1.0, &mut rng);
        let cat = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(cat.shape().c, 4);
        let parts = channel_split(&cat, 2).unwrap();
        assert_eq!(parts, vec![a, b]);
        assert!(matches!(channel_split(&cat, 3), Err(Error::Indivisible { channels: 4, parts: 3, .. })));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = stream(7, &[]);
        let x = Tensor::<f64>::randn(Shape::new(4, 3, 5, 5), 3.0, &mut rng).map(|v| v + 2.0);
        let g = Tensor::full(Shape::channels(3), 1.0);
        let b = Tensor::zeros(Shape::channels(3));
        let (y, _) = batchnorm_train(&x, &g, &b).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..25).map(move |i| (n, i)))
                .map(|(n, i)| y.at(n, c, i / 5, i % 5))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
    }

    #[test]
    fn batchnorm_eval_is_affine_with_unit_stats() {
        let mut rng = stream(8, &[]);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        let g = Tensor::new(Shape::channels(2), vec![2.0, -1.0]).unwrap();
        let b = Tensor::new(Shape::channels(2), vec![0.5, 0.25]).unwrap();
        let y = batchnorm_eval(&x, &g, &b, &Tensor::zeros(Shape::channels(2)), &Tensor::full(Shape::channels(2), 1.0)).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for h in 0..3 {
            for w in 0..3 {
                assert!((y.at(0, 0, h, w) - (2.0 * k * x.at(0, 0, h, w) + 0.5)).abs() < 1e-12);
                assert!((y.at(0, 1, h, w) - (-k * x.at(0, 1, h, w) + 0.25)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_rejects_single_sample() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let v = Tensor::zeros(Shape::channels(2));
        assert!(batchnorm_train(&x, &v, &v).is_err());
    }

    #[test]
    fn running_stats_blend() {
        let mut rm = Tensor::<f64>::zeros(Shape::channels(1));
        let mut rv = Tensor::<f64>::full(Shape::channels(1), 1.0);
        let stats = BatchStats { mean: vec![2.0], var: vec![3.0], inv_std: vec![0.0], count: 4 };
        update_running_stats(&mut rm, &mut rv, &stats);
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
        assert!((rv.data()[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
    }
}
